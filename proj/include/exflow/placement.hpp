// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "exflow/trace.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace exflow {

/// Two-tier GPU grid with per-tier hop costs in arbitrary time units per
/// token hop. Intra-GPU hops are free by definition.
struct Topology {
    int num_nodes = 1;
    int gpus_per_node = 1;
    double intra_node_hop_cost = 1.0;
    double inter_node_hop_cost = 4.0;

    int total_gpus() const { return num_nodes * gpus_per_node; }
    int node_of(int gpu) const { return gpu / gpus_per_node; }
    void validate() const;
};

/// Which tier a partitioning or crossing refers to.
enum class Level { node, gpu };

/// Assignment of every (layer, expert) to a GPU on a num_nodes x
/// gpus_per_node grid. Balanced: every layer places exactly E/G experts per
/// GPU, hence E/num_nodes per node.
struct Placement {
    int num_experts = 0;
    int num_layers = 0;
    int num_nodes = 1;
    int gpus_per_node = 1;
    Eigen::MatrixXi assign; // L x E gpu ids

    int total_gpus() const { return num_nodes * gpus_per_node; }
    int node_of(int gpu) const { return gpu / gpus_per_node; }
    int gpu_of(int layer, int expert) const { return assign(layer, expert); }

    /// Throws std::invalid_argument on broken balance, range, or shape.
    void validate() const;
};

/// Same GPU ids reinterpreted on a different (nodes, gpus_per_node) grid
/// with an identical total GPU count. Per-GPU balance implies per-node
/// balance on any such grid.
Placement regrid(Placement placement, int num_nodes, int gpus_per_node);

/// Layer-independent blocks: expert i lives on GPU i / (E/G).
Placement contiguous_placement(int num_experts, int num_layers, const Topology& topology);

/// Independent uniformly drawn balanced assignment per layer, seeded.
Placement random_placement(int num_experts, int num_layers, const Topology& topology,
                           std::uint64_t seed);

/// Binary program for balanced expert placement: x_{i,j}^p placement
/// variables, one weighted crossing variable R_{a,b,j} per transition pair
/// with positive weight, balance and exclusivity equalities, and two
/// crossing inequalities per (pair, partition).
struct IlpModel {
    struct WeightedPair {
        int source_layer = 0;
        int from_expert = 0;
        int to_expert = 0;
        double weight = 0.0;
    };

    int num_experts = 0;
    int num_layers = 0;
    int partitions = 0;
    Level level = Level::gpu;
    std::vector<WeightedPair> pairs; // positive weights, ordered by (j, a, b)

    long x_variable_count() const {
        return static_cast<long>(num_experts) * num_layers * partitions;
    }
    long r_variable_count() const { return static_cast<long>(pairs.size()); }
    long balance_row_count() const { return static_cast<long>(num_layers) * partitions; }
    long exclusivity_row_count() const { return static_cast<long>(num_layers) * num_experts; }
    long crossing_row_count() const { return 2L * partitions * static_cast<long>(pairs.size()); }
};

/// Aggregates gap-1 transition counts into the per-pair weighted model.
/// Token-level crossing variables collapse into one weighted variable per
/// (expert pair, layer); the optimum is unchanged.
IlpModel build_ilp(const TransitionCounts& counts, int partitions, Level level);

/// CPLEX-style LP text: Minimize / Subject To / Binary / End with
/// deterministic variable names x_<i>_<j>_<p> and R_<a>_<b>_<j>.
std::string export_lp(const IlpModel& model);

/// Weighted crossings of `placement` at the given level:
/// sum over j, a, b of w_j(a,b) * [group(a, j) != group(b, j+1)].
double objective_crossings(const TransitionCounts& counts, const Placement& placement, Level level);

/// Number of balanced labeled assignments of `items` into `parts` groups,
/// E!/((E/P)!^P), saturated at `cap + 1` to keep the arithmetic exact.
long balanced_assignment_count(int items, int parts, long cap);

inline constexpr long kDefaultStateCap = 10000;

struct AnnealParams {
    int restarts = 8;
    long max_iters = 0;              // 0: 20000 * L
    double initial_temperature = 0.0; // 0: mean positive weight
    double cooling = 0.999;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Outcome of one placement solve. `objective` is the weighted cross-GPU
/// crossing count of the returned placement, recomputable through
/// objective_crossings; staged solves also break it down by tier and carry
/// the hop-cost-weighted total.
struct SolveReport {
    std::string solver;
    double objective = 0.0;
    std::uint64_t seed = 0;
    long iterations = 0;
    int restarts = 0;
    std::optional<double> optimality_gap;      // objective - exact optimum
    std::optional<double> inter_node_crossings;
    std::optional<double> intra_node_crossings;
    std::optional<double> weighted_cost;
};

/// Exact single-level solve by dynamic programming over the layer chain of
/// balanced assignments. Requires the per-layer state count to stay within
/// `state_cap`; throws std::invalid_argument pointing at the local-search
/// solver otherwise. Ties break to the lexicographically smallest assignment
/// sequence. The result is returned on a 1 x partitions grid; regrid() it
/// for a physical topology.
std::pair<Placement, SolveReport> solve_exact_dp(const TransitionCounts& counts, int partitions,
                                                 long state_cap = kDefaultStateCap);

/// Simulated annealing over balance-preserving swaps of two experts' groups
/// within one layer; geometric cooling, best of `restarts` runs (ties to the
/// lowest restart index), deterministic per seed.
std::pair<Placement, SolveReport> solve_local_search(const TransitionCounts& counts, int partitions,
                                                     const AnnealParams& params);

/// Two-stage hierarchical solve: stage 1 partitions experts across nodes to
/// minimize inter-node weighted crossings; stage 2 partitions each node's
/// per-layer experts across its GPUs, counting only pairs whose endpoints
/// both stayed on that node. Each stage uses the exact DP when its state
/// count fits `state_cap` and local search otherwise.
std::pair<Placement, SolveReport> solve_staged(const TransitionCounts& counts,
                                               const Topology& topology, const AnnealParams& params,
                                               long state_cap = kDefaultStateCap);

} // namespace exflow
