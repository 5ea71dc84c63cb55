// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "exflow/placement.hpp"
#include "exflow/sim.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace exflow {

inline constexpr const char* kToolVersion = "exflow 0.1.0";

/// Record of one CLI invocation: the command, every resolved parameter
/// (seeds included), input/output paths and the tool version. The wall
/// clock lives only in the sidecar manifest file so that rerunning a
/// command with the same parameters reproduces every primary artifact
/// byte for byte.
struct RunManifest {
    std::string command;
    std::string version = kToolVersion;
    nlohmann::json parameters = nlohmann::json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double wall_clock_ms = 0.0;
};

/// Deterministic subset embedded into JSON artifacts (no wall clock).
nlohmann::json manifest_core(const RunManifest& manifest);

void to_json(nlohmann::json& j, const RunManifest& manifest);
void from_json(const nlohmann::json& j, RunManifest& manifest);

void to_json(nlohmann::json& j, const Placement& placement);
void from_json(const nlohmann::json& j, Placement& placement);

void to_json(nlohmann::json& j, const SolveReport& report);
void from_json(const nlohmann::json& j, SolveReport& report);

void to_json(nlohmann::json& j, const SimReport& report);
void from_json(const nlohmann::json& j, SimReport& report);

void to_json(nlohmann::json& j, const ComparisonRow& row);

Placement load_placement(const std::filesystem::path& path);

/// Writes pretty-printed JSON with a trailing newline, atomically enough
/// for CLI use (truncate + write).
void save_json(const std::filesystem::path& path, const nlohmann::json& j);

} // namespace exflow
