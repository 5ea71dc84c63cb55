// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace exflow {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using ProbMatrix = Eigen::MatrixXd;
using CountVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;
using SeenMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Token paths stored row-major so each token's per-layer expert ids are
/// contiguous in memory.
using PathMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-token expert routing decisions across the MoE layers of one model.
/// paths(t, j) is the expert id token t was routed to at layer j.
struct RoutingTrace {
    int num_experts = 0;
    int num_layers = 0;
    PathMatrix paths;

    int num_tokens() const { return static_cast<int>(paths.rows()); }

    /// Throws std::invalid_argument when any structural invariant is broken
    /// (E >= 1, L >= 2, T >= 1, every id in [0, E)).
    void validate() const;
};

/// Malformed EXFLOW-TRACE input; message carries the offending line number.
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Parses the EXFLOW-TRACE v1 text format:
///   line 1: `EXFLOW-TRACE v1`
///   line 2: `E <experts> L <layers>`
///   then one line of L space-separated expert ids per token.
/// Lines starting with `#` and blank lines are ignored.
RoutingTrace parse_trace(std::istream& in);
RoutingTrace parse_trace(const std::string& text);
RoutingTrace load_trace(const std::filesystem::path& path);

void write_trace(std::ostream& out, const RoutingTrace& trace);
std::string serialize_trace(const RoutingTrace& trace);
void save_trace(const std::filesystem::path& path, const RoutingTrace& trace);

/// Transition counts between layer j and layer j+gap.
/// matrices[j](a, b) = number of tokens at expert a in layer j routed to
/// expert b in layer j+gap. One matrix per source layer j in [0, L-gap).
struct TransitionCounts {
    int num_experts = 0;
    int num_layers = 0;
    int gap = 1;
    std::vector<CountMatrix> matrices;
    std::vector<CountVector> row_totals;

    int num_layer_pairs() const { return static_cast<int>(matrices.size()); }
};

TransitionCounts count_transitions(const RoutingTrace& trace, int gap = 1);

/// Row-stochastic conditional routing probabilities between layer pairs.
/// Rows with no observations stay all-zero and are flagged unseen instead of
/// being smoothed; downstream weights must reflect only observed routing.
struct AffinityMatrix {
    int num_experts = 0;
    int num_layers = 0;
    int gap = 1;
    std::vector<ProbMatrix> matrices;
    std::vector<SeenMask> seen;

    int num_layer_pairs() const { return static_cast<int>(matrices.size()); }
};

AffinityMatrix conditional_probabilities(const TransitionCounts& counts);

/// Index of the most likely follow-up expert for `expert` at `source_layer`;
/// ties break to the lowest index. Throws if the row has no observations.
int most_affiliated(const AffinityMatrix& affinity, int source_layer, int expert);

/// E x E comma-separated probabilities with 6 decimal digits, one source
/// expert per row. Deterministic byte-for-byte.
std::string export_heatmap_csv(const AffinityMatrix& affinity, int source_layer);

/// Relabels every expert id e as perm[e]. perm must be a permutation of
/// [0, E).
RoutingTrace permute_experts(const RoutingTrace& trace, std::span<const int> perm);

/// Uniform sample of `count` distinct tokens, without replacement, seeded.
RoutingTrace subsample_tokens(const RoutingTrace& trace, int count, std::uint64_t seed);

} // namespace exflow
