// SPDX-License-Identifier: Apache-2.0
#include "exflow/synth.hpp"

#include "exflow/rng.hpp"

#include <stdexcept>
#include <string>

namespace exflow {

void SynthConfig::validate() const {
    if (num_experts < 1) {
        throw std::invalid_argument("num_experts must be >= 1");
    }
    if (num_layers < 2) {
        throw std::invalid_argument("num_layers must be >= 2");
    }
    if (num_tokens < 1) {
        throw std::invalid_argument("num_tokens must be >= 1");
    }
    if (affinity_strength < 0.0 || affinity_strength > 1.0) {
        throw std::invalid_argument("affinity_strength must be in [0,1]");
    }
    if (planted_groups < 1 || num_experts % planted_groups != 0) {
        throw std::invalid_argument("planted_groups " + std::to_string(planted_groups) +
                                    " must divide num_experts " + std::to_string(num_experts));
    }
}

RoutingTrace generate_markov_trace(const SynthConfig& config) {
    config.validate();
    const int block = config.group_size();

    RoutingTrace trace;
    trace.num_experts = config.num_experts;
    trace.num_layers = config.num_layers;
    trace.paths.resize(config.num_tokens, config.num_layers);

    Rng rng(config.seed);
    for (int t = 0; t < config.num_tokens; ++t) {
        int current = rng.below_int(config.num_experts);
        trace.paths(t, 0) = current;
        for (int j = 1; j < config.num_layers; ++j) {
            if (rng.uniform01() < config.affinity_strength) {
                current = (current / block) * block + rng.below_int(block);
            } else {
                current = rng.below_int(config.num_experts);
            }
            trace.paths(t, j) = current;
        }
    }
    return trace;
}

double expected_planted_locality(const SynthConfig& config) {
    config.validate();
    return config.affinity_strength + (1.0 - config.affinity_strength) / config.planted_groups;
}

} // namespace exflow
