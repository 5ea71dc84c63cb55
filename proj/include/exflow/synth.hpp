// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "exflow/trace.hpp"

#include <cstdint>

namespace exflow {

/// Parameters of the seeded synthetic routing-trace generator. Experts are
/// organized in `planted_groups` contiguous blocks; the generated chain stays
/// inside the current expert's block with probability `affinity_strength`.
struct SynthConfig {
    int num_experts = 8;
    int num_layers = 2;
    int num_tokens = 1;
    double affinity_strength = 0.5;
    int planted_groups = 1;
    std::uint64_t seed = 0;

    int group_size() const { return num_experts / planted_groups; }
    void validate() const;
};

/// Generates a routing trace as a first-order Markov chain over experts:
/// layer-0 expert uniform in [0, E); each later layer stays uniform inside
/// the current expert's planted block with probability alpha, otherwise
/// uniform over all experts. Byte-identical output for equal configs
/// (xoshiro256** stream, see rng.hpp).
RoutingTrace generate_markov_trace(const SynthConfig& config);

/// Probability that one transition lands inside its planted group:
/// alpha + (1 - alpha) / planted_groups.
double expected_planted_locality(const SynthConfig& config);

} // namespace exflow
