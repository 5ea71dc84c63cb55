// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "exflow/synth.hpp"
#include "exflow/trace.hpp"

#include <cmath>

using namespace exflow;

namespace {

// Fraction of transitions that land inside the planted block of the
// current expert, measured directly on the paths.
double within_group_fraction(const RoutingTrace& trace, int planted_groups) {
    const int block = trace.num_experts / planted_groups;
    long inside = 0;
    long total = 0;
    for (int t = 0; t < trace.num_tokens(); ++t) {
        for (int j = 0; j + 1 < trace.num_layers; ++j) {
            ++total;
            if (trace.paths(t, j) / block == trace.paths(t, j + 1) / block) {
                ++inside;
            }
        }
    }
    return static_cast<double>(inside) / static_cast<double>(total);
}

} // namespace

TEST_CASE("alpha=1 with singleton groups produces constant paths") {
    SynthConfig config;
    config.num_experts = 6;
    config.planted_groups = 6;
    config.num_layers = 5;
    config.num_tokens = 200;
    config.affinity_strength = 1.0;
    config.seed = 3;
    const RoutingTrace trace = generate_markov_trace(config);
    for (int t = 0; t < trace.num_tokens(); ++t) {
        for (int j = 1; j < trace.num_layers; ++j) {
            CHECK(trace.paths(t, j) == trace.paths(t, 0));
        }
    }
}

TEST_CASE("same seed gives byte-identical traces") {
    SynthConfig config;
    config.num_experts = 8;
    config.planted_groups = 4;
    config.num_layers = 4;
    config.num_tokens = 500;
    config.affinity_strength = 0.7;
    config.seed = 42;
    CHECK(serialize_trace(generate_markov_trace(config)) ==
          serialize_trace(generate_markov_trace(config)));

    config.seed = 43;
    CHECK(serialize_trace(generate_markov_trace(config)) !=
          serialize_trace(generate_markov_trace(SynthConfig{8, 4, 500, 0.7, 4, 42})));
}

TEST_CASE("alpha=0 transition counts concentrate around the uniform cell mean") {
    SynthConfig config;
    config.num_experts = 4;
    config.num_layers = 2;
    config.num_tokens = 100000;
    config.affinity_strength = 0.0;
    config.planted_groups = 1;
    config.seed = 9;
    const RoutingTrace trace = generate_markov_trace(config);
    const TransitionCounts counts = count_transitions(trace, 1);
    const double p = 1.0 / 16.0;
    const double mean = config.num_tokens * p;
    const double sigma = std::sqrt(config.num_tokens * p * (1.0 - p));
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            CHECK(std::abs(counts.matrices[0](a, b) - mean) < 5.0 * sigma);
        }
    }
}

TEST_CASE("generated traces survive a serialize/parse round trip") {
    SynthConfig config;
    config.num_experts = 12;
    config.planted_groups = 3;
    config.num_layers = 3;
    config.num_tokens = 300;
    config.affinity_strength = 0.5;
    config.seed = 17;
    const RoutingTrace trace = generate_markov_trace(config);
    const RoutingTrace parsed = parse_trace(serialize_trace(trace));
    CHECK(parsed.paths == trace.paths);
    CHECK(parsed.num_experts == trace.num_experts);
}

TEST_CASE("expected_planted_locality evaluates the closed form") {
    SynthConfig config;
    config.num_experts = 8;
    config.planted_groups = 8;
    config.affinity_strength = 1.0;
    CHECK(expected_planted_locality(config) == 1.0);

    config.num_experts = 8;
    config.planted_groups = 4;
    config.affinity_strength = 0.0;
    CHECK(expected_planted_locality(config) == 0.25);

    config.num_experts = 16;
    config.planted_groups = 8;
    config.affinity_strength = 0.8;
    CHECK(expected_planted_locality(config) == doctest::Approx(0.825));
}

TEST_CASE("within-group fraction converges to the analytic locality") {
    SynthConfig config;
    config.num_experts = 16;
    config.planted_groups = 8;
    config.num_layers = 3;
    config.num_tokens = 100000; // >= 1e5 transitions
    config.affinity_strength = 0.8;
    config.seed = 123;
    const RoutingTrace trace = generate_markov_trace(config);
    CHECK(within_group_fraction(trace, config.planted_groups) ==
          doctest::Approx(expected_planted_locality(config)).epsilon(0.0125));
}

TEST_CASE("alpha=0 affinity rows flatten toward 1/E") {
    SynthConfig config;
    config.num_experts = 4;
    config.num_layers = 2;
    config.num_tokens = 100000;
    config.affinity_strength = 0.0;
    config.planted_groups = 1;
    config.seed = 31;
    const AffinityMatrix affinity =
        conditional_probabilities(count_transitions(generate_markov_trace(config), 1));
    for (int a = 0; a < 4; ++a) {
        REQUIRE(affinity.seen[0](a));
        CHECK(affinity.matrices[0].row(a).maxCoeff() == doctest::Approx(0.25).epsilon(0.08));
        CHECK(affinity.matrices[0].row(a).maxCoeff() - 0.25 < 0.02);
    }
}

TEST_CASE("invalid configurations are rejected") {
    SynthConfig config;
    config.num_experts = 8;
    config.planted_groups = 3;
    CHECK_THROWS_AS(generate_markov_trace(config), std::invalid_argument);

    config.planted_groups = 4;
    config.affinity_strength = 1.5;
    CHECK_THROWS_AS(generate_markov_trace(config), std::invalid_argument);

    config.affinity_strength = 0.5;
    config.num_layers = 1;
    CHECK_THROWS_AS(generate_markov_trace(config), std::invalid_argument);

    config.num_layers = 2;
    config.num_tokens = 0;
    CHECK_THROWS_AS(generate_markov_trace(config), std::invalid_argument);
}
