// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "exflow/placement.hpp"
#include "exflow/trace.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace exflow {

enum class SimMode { vanilla, coherent };

enum class Tier { intra_gpu, intra_node, inter_node };

/// One layer of a token's journey. In vanilla mode a crossed layer costs two
/// hops (dispatch to the expert's GPU and return to the home GPU, same
/// tier); in coherent mode a crossed layer costs one hop and the token stays
/// where its expert ran.
struct LayerHop {
    bool crossed = false;
    Tier tier = Tier::intra_gpu;
    int hops = 0;
};

std::vector<LayerHop> token_hops(std::span<const std::int32_t> path, int home_gpu,
                                 const Placement& placement, SimMode mode,
                                 const Topology& topology);

struct SimConfig {
    SimMode mode = SimMode::vanilla;
    Topology topology;
    int tokens_per_gpu = 1;
    int iterations = 1;
    /// Per-token home GPUs; defaults to round-robin by token index.
    std::optional<std::vector<int>> homes;

    void validate() const;
};

/// Replay metrics for one placement and mode. Locality fractions use the
/// coherent notion of "current GPU" regardless of mode so that vanilla and
/// coherent rows stay comparable; p counts home-relative Alltoall
/// participation, p_star counts coherent-mode location changes. Collective
/// counts are per iteration; the one-off context gather before inference is
/// reported separately as setup.
struct SimReport {
    long hops_intra_node = 0;
    long hops_inter_node = 0;
    double locality_gpu = 0.0;
    double locality_node = 0.0;
    double p = 0.0;
    double p_star = 0.0;
    long alltoall_count = 0;
    long allgather_count = 0;
    long setup_allgather_count = 0;
    double volume_units = 0.0;
    double estimated_latency = 0.0;

    long total_crossings() const { return hops_intra_node + hops_inter_node; }
};

SimReport simulate(const RoutingTrace& trace, const Placement& placement, const SimConfig& config);

enum class Gating { top1, top2 };
enum class VolumeMethod { deepspeed, fastermoe, tamoe, exflow };

/// Forward communication volume models, in token-buffer units:
///   deepspeed/fastermoe/tamoe: 2*G*N*L*ratio (top-1), 4*G*N*L*ratio (top-2)
///   exflow:                   G*N*(L*ratio + G) (top-1), G*N*(2*L*ratio + G)
/// The ratio argument is p for deepspeed, p_topo for fastermoe/tamoe and
/// p_star for exflow.
double volume_table1(int gpus, int tokens_per_gpu, int layers, double ratio, Gating gating,
                     VolumeMethod method);

/// One placement x mode entry of a comparison run; ratios are against the
/// contiguous-placement vanilla baseline on the same trace and topology.
struct ComparisonRow {
    std::string name;
    SimMode mode = SimMode::vanilla;
    SimReport report;
    double crossings_ratio = 1.0;
    double latency_ratio = 1.0;
    double locality_gpu_ratio = 1.0;
    double locality_node_ratio = 1.0;
};

/// Simulates every named placement in both modes and rates it against the
/// contiguous/vanilla baseline. Rows are ordered by placement name, vanilla
/// before coherent.
std::vector<ComparisonRow> compare_modes(const RoutingTrace& trace,
                                         const std::vector<std::pair<std::string, Placement>>& placements,
                                         const SimConfig& config);

std::string format_comparison_table(const std::vector<ComparisonRow>& rows);

const char* to_string(SimMode mode);
const char* to_string(Tier tier);

} // namespace exflow
