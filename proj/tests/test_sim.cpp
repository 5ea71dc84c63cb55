// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "exflow/json_io.hpp"
#include "exflow/placement.hpp"
#include "exflow/rng.hpp"
#include "exflow/sim.hpp"
#include "exflow/synth.hpp"

#include <numeric>
#include <vector>

using namespace exflow;

namespace {

Topology one_node_four_gpus() {
    Topology topology;
    topology.num_nodes = 1;
    topology.gpus_per_node = 4;
    return topology;
}

RoutingTrace two_token_demo() {
    RoutingTrace trace;
    trace.num_experts = 8;
    trace.num_layers = 3;
    trace.paths.resize(2, 3);
    trace.paths << 0, 4, 2, 5, 5, 4;
    return trace;
}

int total_hops(const std::vector<LayerHop>& hops) {
    int total = 0;
    for (const auto& hop : hops) {
        total += hop.hops;
    }
    return total;
}

} // namespace

TEST_CASE("token hop counts on the bundled two-token demo layout") {
    const Topology topology = one_node_four_gpus();
    const Placement placement = contiguous_placement(8, 3, topology);
    const std::vector<std::int32_t> first{0, 4, 2};
    const std::vector<std::int32_t> second{5, 5, 4};

    CHECK(total_hops(token_hops(first, 1, placement, SimMode::vanilla, topology)) == 4);
    CHECK(total_hops(token_hops(first, 1, placement, SimMode::coherent, topology)) == 3);
    CHECK(total_hops(token_hops(second, 3, placement, SimMode::vanilla, topology)) == 6);
    CHECK(total_hops(token_hops(second, 3, placement, SimMode::coherent, topology)) == 1);
}

TEST_CASE("tokens whose experts all live at home never cross") {
    const Topology topology = one_node_four_gpus();
    const Placement placement = contiguous_placement(8, 3, topology);
    const std::vector<std::int32_t> path{2, 3, 2}; // all on gpu 1
    CHECK(total_hops(token_hops(path, 1, placement, SimMode::vanilla, topology)) == 0);
    CHECK(total_hops(token_hops(path, 1, placement, SimMode::coherent, topology)) == 0);
}

TEST_CASE("token_hops validates shapes and home range") {
    const Topology topology = one_node_four_gpus();
    const Placement placement = contiguous_placement(8, 3, topology);
    const std::vector<std::int32_t> short_path{0, 4};
    CHECK_THROWS_AS(token_hops(short_path, 1, placement, SimMode::vanilla, topology),
                    std::invalid_argument);
    const std::vector<std::int32_t> path{0, 4, 2};
    CHECK_THROWS_AS(token_hops(path, 4, placement, SimMode::vanilla, topology),
                    std::invalid_argument);
}

TEST_CASE("simulate reproduces the demo crossings with explicit homes") {
    const Topology topology = one_node_four_gpus();
    const Placement placement = contiguous_placement(8, 3, topology);
    const RoutingTrace trace = two_token_demo();

    SimConfig config;
    config.topology = topology;
    config.homes = std::vector<int>{1, 3};

    config.mode = SimMode::vanilla;
    const SimReport vanilla = simulate(trace, placement, config);
    CHECK(vanilla.total_crossings() == 10);
    CHECK(vanilla.hops_inter_node == 0);
    CHECK(vanilla.p == doctest::Approx(5.0 / 6.0));

    config.mode = SimMode::coherent;
    const SimReport coherent = simulate(trace, placement, config);
    CHECK(coherent.total_crossings() == 4);
    CHECK(coherent.p_star == doctest::Approx(4.0 / 6.0));
    CHECK(coherent.total_crossings() <= vanilla.total_crossings());
}

TEST_CASE("collective counts depend on the protocol, not the placement") {
    const Topology topology = one_node_four_gpus();
    const RoutingTrace trace = two_token_demo();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Placement placement = random_placement(8, 3, topology, seed);
        SimConfig config;
        config.topology = topology;

        config.mode = SimMode::vanilla;
        const SimReport vanilla = simulate(trace, placement, config);
        CHECK(vanilla.alltoall_count == 6); // 2L
        CHECK(vanilla.allgather_count == 0);
        CHECK(vanilla.setup_allgather_count == 0);

        config.mode = SimMode::coherent;
        const SimReport coherent = simulate(trace, placement, config);
        CHECK(coherent.alltoall_count == 3); // L
        CHECK(coherent.allgather_count == 1);
        CHECK(coherent.setup_allgather_count == 1);
    }
}

TEST_CASE("planted traces replay with full locality when homes align") {
    SynthConfig synth;
    synth.num_experts = 8;
    synth.planted_groups = 4;
    synth.num_layers = 4;
    synth.num_tokens = 400;
    synth.affinity_strength = 1.0;
    synth.seed = 2;
    const RoutingTrace trace = generate_markov_trace(synth);

    Topology topology;
    topology.num_nodes = 1;
    topology.gpus_per_node = 4;
    const Placement placement = contiguous_placement(8, 4, topology); // blocks == planted groups

    std::vector<int> homes(trace.num_tokens());
    for (int t = 0; t < trace.num_tokens(); ++t) {
        homes[t] = placement.gpu_of(0, trace.paths(t, 0));
    }
    SimConfig config;
    config.topology = topology;
    config.mode = SimMode::coherent;
    config.homes = homes;
    const SimReport report = simulate(trace, placement, config);
    CHECK(report.locality_gpu == 1.0);
    CHECK(report.p_star == 0.0);
    CHECK(report.total_crossings() == 0);
}

TEST_CASE("coherent crossings never exceed vanilla crossings") {
    Rng rng(99);
    for (int round = 0; round < 400; ++round) {
        const int nodes = 1 + rng.below_int(3);
        const int gpus_per_node = 1 + rng.below_int(3);
        Topology topology;
        topology.num_nodes = nodes;
        topology.gpus_per_node = gpus_per_node;
        const int gpus = topology.total_gpus();
        const int experts = gpus * (1 + rng.below_int(3));
        const int layers = 2 + rng.below_int(5);
        const Placement placement = random_placement(experts, layers, topology, rng.next());

        std::vector<std::int32_t> path(layers);
        for (auto& expert : path) {
            expert = rng.below_int(experts);
        }
        const int home = rng.below_int(gpus);
        const auto vanilla = token_hops(path, home, placement, SimMode::vanilla, topology);
        const auto coherent = token_hops(path, home, placement, SimMode::coherent, topology);
        CHECK(total_hops(coherent) <= total_hops(vanilla));

        // vanilla hop total is exactly twice the away-from-home layer count
        int away = 0;
        for (int j = 0; j < layers; ++j) {
            if (placement.gpu_of(j, path[j]) != home) {
                ++away;
            }
        }
        CHECK(total_hops(vanilla) == 2 * away);
    }
}

TEST_CASE("single-node topologies never report inter-node hops") {
    Rng rng(7);
    Topology topology = one_node_four_gpus();
    const Placement placement = random_placement(8, 4, topology, 5);
    RoutingTrace trace;
    trace.num_experts = 8;
    trace.num_layers = 4;
    trace.paths.resize(50, 4);
    for (int t = 0; t < 50; ++t) {
        for (int j = 0; j < 4; ++j) {
            trace.paths(t, j) = rng.below_int(8);
        }
    }
    for (const SimMode mode : {SimMode::vanilla, SimMode::coherent}) {
        SimConfig config;
        config.topology = topology;
        config.mode = mode;
        const SimReport report = simulate(trace, placement, config);
        CHECK(report.hops_inter_node == 0);
        CHECK(report.locality_gpu <= report.locality_node);
        CHECK(report.p_star <= 1.0);
    }
}

TEST_CASE("volume formulas match the frozen grid points") {
    CHECK(volume_table1(4, 8, 3, 1.0, Gating::top1, VolumeMethod::deepspeed) == 192.0);
    CHECK(volume_table1(4, 8, 3, 0.25, Gating::top1, VolumeMethod::exflow) == 152.0);
    CHECK(volume_table1(4, 8, 3, 1.0, Gating::top2, VolumeMethod::deepspeed) == 384.0);
}

TEST_CASE("volume is linear in the per-GPU token count") {
    for (const VolumeMethod method : {VolumeMethod::deepspeed, VolumeMethod::fastermoe,
                                      VolumeMethod::tamoe, VolumeMethod::exflow}) {
        for (const Gating gating : {Gating::top1, Gating::top2}) {
            const double once = volume_table1(4, 8, 12, 0.5, gating, method);
            const double twice = volume_table1(4, 16, 12, 0.5, gating, method);
            CHECK(twice == doctest::Approx(2.0 * once));
        }
    }
}

TEST_CASE("volume arguments are range-checked") {
    CHECK_THROWS_AS(volume_table1(4, 8, 3, 1.5, Gating::top1, VolumeMethod::deepspeed),
                    std::invalid_argument);
    CHECK_THROWS_AS(volume_table1(0, 8, 3, 0.5, Gating::top1, VolumeMethod::deepspeed),
                    std::invalid_argument);
}

TEST_CASE("compare_modes rates the contiguous baseline at ratio one") {
    const RoutingTrace trace = two_token_demo();
    const Topology topology = one_node_four_gpus();
    SimConfig config;
    config.topology = topology;
    const Placement contiguous = contiguous_placement(8, 3, topology);
    const auto rows = compare_modes(trace, {{"contiguous", contiguous}}, config);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].mode == SimMode::vanilla);
    CHECK(rows[0].crossings_ratio == 1.0);
    CHECK(rows[0].latency_ratio == 1.0);
    CHECK(rows[0].locality_gpu_ratio == 1.0);
    CHECK(rows[0].locality_node_ratio == 1.0);
    // coherent row of the same placement must not cross more
    CHECK(rows[1].report.total_crossings() <= rows[0].report.total_crossings());

    CHECK_THROWS_AS(compare_modes(trace, {}, config), std::invalid_argument);
}

TEST_CASE("comparison rows are ordered by placement name") {
    const RoutingTrace trace = two_token_demo();
    const Topology topology = one_node_four_gpus();
    SimConfig config;
    config.topology = topology;
    const auto rows = compare_modes(trace,
                                    {{"zeta", random_placement(8, 3, topology, 3)},
                                     {"alpha", contiguous_placement(8, 3, topology)}},
                                    config);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].name == "alpha");
    CHECK(rows[2].name == "zeta");
    const std::string table = format_comparison_table(rows);
    CHECK(table.find("alpha") != std::string::npos);
    CHECK(table.find("zeta") != std::string::npos);
}

TEST_CASE("simulate validates homes and shapes") {
    const Topology topology = one_node_four_gpus();
    const Placement placement = contiguous_placement(8, 3, topology);
    const RoutingTrace trace = two_token_demo();

    SimConfig config;
    config.topology = topology;
    config.homes = std::vector<int>{1};
    CHECK_THROWS_AS(simulate(trace, placement, config), std::invalid_argument);
    config.homes = std::vector<int>{1, 9};
    CHECK_THROWS_AS(simulate(trace, placement, config), std::invalid_argument);

    config.homes.reset();
    Topology other = topology;
    other.num_nodes = 2;
    config.topology = other;
    CHECK_THROWS_AS(simulate(trace, placement, config), std::invalid_argument);
}

TEST_CASE("report and placement JSON round-trips preserve every field") {
    const Topology topology = one_node_four_gpus();
    const Placement placement = random_placement(8, 3, topology, 31);
    nlohmann::json pj = placement;
    const Placement parsed = pj.get<Placement>();
    CHECK(parsed.assign == placement.assign);
    CHECK(nlohmann::json(parsed) == pj);

    SimConfig config;
    config.topology = topology;
    config.mode = SimMode::coherent;
    const SimReport report = simulate(two_token_demo(), placement, config);
    nlohmann::json rj = report;
    for (const char* key : {"hops_intra_node", "hops_inter_node", "locality_gpu", "locality_node",
                            "p", "p_star", "alltoall_count", "allgather_count", "volume_units",
                            "estimated_latency"}) {
        CHECK(rj.contains(key));
    }
    const SimReport back = rj.get<SimReport>();
    CHECK(nlohmann::json(back) == rj);

    SolveReport solve;
    solve.solver = "exact-dp";
    solve.objective = 3.0;
    solve.optimality_gap = 0.0;
    nlohmann::json sj = solve;
    CHECK(nlohmann::json(sj.get<SolveReport>()) == sj);

    RunManifest manifest;
    manifest.command = "simulate";
    manifest.parameters = {{"seed", 1}};
    manifest.inputs = {"a.trace"};
    manifest.outputs = {"b.json"};
    manifest.wall_clock_ms = 12.5;
    nlohmann::json mj = manifest;
    CHECK(nlohmann::json(mj.get<RunManifest>()) == mj);
    CHECK_FALSE(manifest_core(manifest).contains("wall_clock_ms"));
}
