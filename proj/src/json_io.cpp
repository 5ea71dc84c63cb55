// SPDX-License-Identifier: Apache-2.0
#include "exflow/json_io.hpp"

#include <fstream>

namespace exflow {

nlohmann::json manifest_core(const RunManifest& manifest) {
    return nlohmann::json{{"command", manifest.command},
                          {"version", manifest.version},
                          {"parameters", manifest.parameters},
                          {"inputs", manifest.inputs},
                          {"outputs", manifest.outputs}};
}

void to_json(nlohmann::json& j, const RunManifest& manifest) {
    j = manifest_core(manifest);
    j["wall_clock_ms"] = manifest.wall_clock_ms;
}

void from_json(const nlohmann::json& j, RunManifest& manifest) {
    j.at("command").get_to(manifest.command);
    j.at("version").get_to(manifest.version);
    manifest.parameters = j.at("parameters");
    j.at("inputs").get_to(manifest.inputs);
    j.at("outputs").get_to(manifest.outputs);
    manifest.wall_clock_ms = j.value("wall_clock_ms", 0.0);
}

void to_json(nlohmann::json& j, const Placement& placement) {
    std::vector<std::vector<int>> assign(placement.num_layers,
                                         std::vector<int>(placement.num_experts));
    for (int layer = 0; layer < placement.num_layers; ++layer) {
        for (int expert = 0; expert < placement.num_experts; ++expert) {
            assign[layer][expert] = placement.assign(layer, expert);
        }
    }
    j = nlohmann::json{{"experts", placement.num_experts},
                       {"layers", placement.num_layers},
                       {"nodes", placement.num_nodes},
                       {"gpus_per_node", placement.gpus_per_node},
                       {"assign", assign}};
}

void from_json(const nlohmann::json& j, Placement& placement) {
    placement.num_experts = j.at("experts").get<int>();
    placement.num_layers = j.at("layers").get<int>();
    placement.num_nodes = j.at("nodes").get<int>();
    placement.gpus_per_node = j.at("gpus_per_node").get<int>();
    const auto assign = j.at("assign").get<std::vector<std::vector<int>>>();
    if (static_cast<int>(assign.size()) != placement.num_layers) {
        throw std::invalid_argument("placement assign table has wrong layer count");
    }
    placement.assign.resize(placement.num_layers, placement.num_experts);
    for (int layer = 0; layer < placement.num_layers; ++layer) {
        if (static_cast<int>(assign[layer].size()) != placement.num_experts) {
            throw std::invalid_argument("placement assign row has wrong expert count");
        }
        for (int expert = 0; expert < placement.num_experts; ++expert) {
            placement.assign(layer, expert) = assign[layer][expert];
        }
    }
    placement.validate();
}

void to_json(nlohmann::json& j, const SolveReport& report) {
    j = nlohmann::json{{"solver", report.solver},
                       {"objective", report.objective},
                       {"seed", report.seed},
                       {"iterations", report.iterations},
                       {"restarts", report.restarts}};
    if (report.optimality_gap) {
        j["optimality_gap"] = *report.optimality_gap;
    }
    if (report.inter_node_crossings) {
        j["inter_node_crossings"] = *report.inter_node_crossings;
    }
    if (report.intra_node_crossings) {
        j["intra_node_crossings"] = *report.intra_node_crossings;
    }
    if (report.weighted_cost) {
        j["weighted_cost"] = *report.weighted_cost;
    }
}

void from_json(const nlohmann::json& j, SolveReport& report) {
    j.at("solver").get_to(report.solver);
    j.at("objective").get_to(report.objective);
    j.at("seed").get_to(report.seed);
    j.at("iterations").get_to(report.iterations);
    j.at("restarts").get_to(report.restarts);
    report.optimality_gap.reset();
    report.inter_node_crossings.reset();
    report.intra_node_crossings.reset();
    report.weighted_cost.reset();
    if (j.contains("optimality_gap")) {
        report.optimality_gap = j.at("optimality_gap").get<double>();
    }
    if (j.contains("inter_node_crossings")) {
        report.inter_node_crossings = j.at("inter_node_crossings").get<double>();
    }
    if (j.contains("intra_node_crossings")) {
        report.intra_node_crossings = j.at("intra_node_crossings").get<double>();
    }
    if (j.contains("weighted_cost")) {
        report.weighted_cost = j.at("weighted_cost").get<double>();
    }
}

void to_json(nlohmann::json& j, const SimReport& report) {
    j = nlohmann::json{{"hops_intra_node", report.hops_intra_node},
                       {"hops_inter_node", report.hops_inter_node},
                       {"locality_gpu", report.locality_gpu},
                       {"locality_node", report.locality_node},
                       {"p", report.p},
                       {"p_star", report.p_star},
                       {"alltoall_count", report.alltoall_count},
                       {"allgather_count", report.allgather_count},
                       {"setup_allgather_count", report.setup_allgather_count},
                       {"volume_units", report.volume_units},
                       {"estimated_latency", report.estimated_latency}};
}

void from_json(const nlohmann::json& j, SimReport& report) {
    j.at("hops_intra_node").get_to(report.hops_intra_node);
    j.at("hops_inter_node").get_to(report.hops_inter_node);
    j.at("locality_gpu").get_to(report.locality_gpu);
    j.at("locality_node").get_to(report.locality_node);
    j.at("p").get_to(report.p);
    j.at("p_star").get_to(report.p_star);
    j.at("alltoall_count").get_to(report.alltoall_count);
    j.at("allgather_count").get_to(report.allgather_count);
    j.at("setup_allgather_count").get_to(report.setup_allgather_count);
    j.at("volume_units").get_to(report.volume_units);
    j.at("estimated_latency").get_to(report.estimated_latency);
}

void to_json(nlohmann::json& j, const ComparisonRow& row) {
    j = nlohmann::json{{"placement", row.name},
                       {"mode", to_string(row.mode)},
                       {"report", row.report},
                       {"ratios",
                        {{"crossings", row.crossings_ratio},
                         {"latency", row.latency_ratio},
                         {"locality_gpu", row.locality_gpu_ratio},
                         {"locality_node", row.locality_node_ratio}}}};
}

Placement load_placement(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open placement file: " + path.string());
    }
    nlohmann::json j;
    in >> j;
    return j.get<Placement>();
}

void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path.string());
    }
    out << j.dump(2) << '\n';
}

} // namespace exflow
