// SPDX-License-Identifier: Apache-2.0
#include "exflow/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace exflow {

namespace {

Tier tier_between(int gpu_a, int gpu_b, const Topology& topology) {
    if (gpu_a == gpu_b) {
        return Tier::intra_gpu;
    }
    return topology.node_of(gpu_a) == topology.node_of(gpu_b) ? Tier::intra_node : Tier::inter_node;
}

} // namespace

void SimConfig::validate() const {
    topology.validate();
    if (tokens_per_gpu < 1) {
        throw std::invalid_argument("tokens_per_gpu must be >= 1");
    }
    if (iterations < 1) {
        throw std::invalid_argument("iterations must be >= 1");
    }
}

std::vector<LayerHop> token_hops(std::span<const std::int32_t> path, int home_gpu,
                                 const Placement& placement, SimMode mode,
                                 const Topology& topology) {
    topology.validate();
    placement.validate();
    if (static_cast<int>(path.size()) != placement.num_layers) {
        throw std::invalid_argument("path length does not match placement layers");
    }
    if (topology.num_nodes != placement.num_nodes ||
        topology.gpus_per_node != placement.gpus_per_node) {
        throw std::invalid_argument("topology grid does not match placement grid");
    }
    if (home_gpu < 0 || home_gpu >= topology.total_gpus()) {
        throw std::invalid_argument("home gpu out of range");
    }

    std::vector<LayerHop> hops;
    hops.reserve(path.size());
    int location = home_gpu;
    for (int j = 0; j < static_cast<int>(path.size()); ++j) {
        const int expert = path[j];
        if (expert < 0 || expert >= placement.num_experts) {
            throw std::invalid_argument("expert id out of range in path");
        }
        const int expert_gpu = placement.gpu_of(j, expert);
        LayerHop hop;
        if (mode == SimMode::vanilla) {
            // Dispatch to the expert and return home for attention.
            hop.crossed = expert_gpu != home_gpu;
            hop.tier = tier_between(home_gpu, expert_gpu, topology);
            hop.hops = hop.crossed ? 2 : 0;
        } else {
            // Attention runs in place; the token moves only when the next
            // expert lives elsewhere, and never returns home.
            hop.crossed = expert_gpu != location;
            hop.tier = tier_between(location, expert_gpu, topology);
            hop.hops = hop.crossed ? 1 : 0;
            location = expert_gpu;
        }
        hops.push_back(hop);
    }
    return hops;
}

SimReport simulate(const RoutingTrace& trace, const Placement& placement, const SimConfig& config) {
    trace.validate();
    placement.validate();
    config.validate();
    if (trace.num_experts != placement.num_experts || trace.num_layers != placement.num_layers) {
        throw std::invalid_argument("trace and placement shapes disagree");
    }
    if (config.topology.num_nodes != placement.num_nodes ||
        config.topology.gpus_per_node != placement.gpus_per_node) {
        throw std::invalid_argument("topology grid does not match placement grid");
    }

    const int tokens = trace.num_tokens();
    const int layers = trace.num_layers;
    const int gpus = config.topology.total_gpus();
    if (config.homes) {
        if (static_cast<int>(config.homes->size()) != tokens) {
            throw std::invalid_argument("homes must list one GPU per token");
        }
        for (const int home : *config.homes) {
            if (home < 0 || home >= gpus) {
                throw std::invalid_argument("home gpu out of range");
            }
        }
    }

    SimReport report;
    long gpu_local_events = 0;
    long node_local_events = 0;
    long away_from_home_events = 0;
    long coherent_moves = 0;

    for (int t = 0; t < tokens; ++t) {
        const int home = config.homes ? (*config.homes)[t] : t % gpus;
        int location = home; // coherent current GPU, tracked for both modes
        for (int j = 0; j < layers; ++j) {
            const int expert_gpu = placement.gpu_of(j, trace.paths(t, j));
            if (expert_gpu == location) {
                ++gpu_local_events;
            }
            if (config.topology.node_of(expert_gpu) == config.topology.node_of(location)) {
                ++node_local_events;
            }
            if (expert_gpu != home) {
                ++away_from_home_events;
            }
            if (expert_gpu != location) {
                ++coherent_moves;
                const Tier tier = tier_between(location, expert_gpu, config.topology);
                if (config.mode == SimMode::coherent) {
                    if (tier == Tier::inter_node) {
                        ++report.hops_inter_node;
                    } else {
                        ++report.hops_intra_node;
                    }
                }
            }
            if (config.mode == SimMode::vanilla && expert_gpu != home) {
                const Tier tier = tier_between(home, expert_gpu, config.topology);
                if (tier == Tier::inter_node) {
                    report.hops_inter_node += 2;
                } else {
                    report.hops_intra_node += 2;
                }
            }
            location = expert_gpu;
        }
    }

    const double events = static_cast<double>(tokens) * layers;
    report.locality_gpu = gpu_local_events / events;
    report.locality_node = node_local_events / events;
    report.p = away_from_home_events / events;
    report.p_star = coherent_moves / events;

    if (config.mode == SimMode::vanilla) {
        report.alltoall_count = 2L * layers;
        report.allgather_count = 0;
        report.setup_allgather_count = 0;
        report.volume_units = volume_table1(gpus, config.tokens_per_gpu, layers, report.p,
                                            Gating::top1, VolumeMethod::deepspeed);
    } else {
        report.alltoall_count = layers;
        report.allgather_count = 1;
        report.setup_allgather_count = 1;
        report.volume_units = volume_table1(gpus, config.tokens_per_gpu, layers, report.p_star,
                                            Gating::top1, VolumeMethod::exflow);
    }
    report.estimated_latency = report.hops_intra_node * config.topology.intra_node_hop_cost +
                               report.hops_inter_node * config.topology.inter_node_hop_cost;
    return report;
}

double volume_table1(int gpus, int tokens_per_gpu, int layers, double ratio, Gating gating,
                     VolumeMethod method) {
    if (gpus < 1 || tokens_per_gpu < 1 || layers < 1) {
        throw std::invalid_argument("gpus, tokens_per_gpu and layers must be positive");
    }
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw std::invalid_argument("ratio must be in [0,1]");
    }
    const double g = gpus;
    const double n = tokens_per_gpu;
    const double l = layers;
    switch (method) {
    case VolumeMethod::deepspeed:
    case VolumeMethod::fastermoe:
    case VolumeMethod::tamoe:
        return (gating == Gating::top1 ? 2.0 : 4.0) * g * n * l * ratio;
    case VolumeMethod::exflow:
        return gating == Gating::top1 ? g * n * (l * ratio + g) : g * n * (2.0 * l * ratio + g);
    }
    throw std::invalid_argument("unknown volume method");
}

std::vector<ComparisonRow> compare_modes(const RoutingTrace& trace,
                                         const std::vector<std::pair<std::string, Placement>>& placements,
                                         const SimConfig& config) {
    if (placements.empty()) {
        throw std::invalid_argument("compare_modes needs at least one placement");
    }

    SimConfig baseline_config = config;
    baseline_config.mode = SimMode::vanilla;
    const Placement baseline =
        contiguous_placement(trace.num_experts, trace.num_layers, config.topology);
    const SimReport base = simulate(trace, baseline, baseline_config);

    auto ratio = [](double value, double reference) {
        if (reference != 0.0) {
            return value / reference;
        }
        return value == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    };

    std::vector<std::pair<std::string, Placement>> ordered = placements;
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<ComparisonRow> rows;
    for (const auto& [name, placement] : ordered) {
        for (const SimMode mode : {SimMode::vanilla, SimMode::coherent}) {
            SimConfig run = config;
            run.mode = mode;
            ComparisonRow row;
            row.name = name;
            row.mode = mode;
            row.report = simulate(trace, placement, run);
            row.crossings_ratio = ratio(static_cast<double>(row.report.total_crossings()),
                                        static_cast<double>(base.total_crossings()));
            row.latency_ratio = ratio(row.report.estimated_latency, base.estimated_latency);
            row.locality_gpu_ratio = ratio(row.report.locality_gpu, base.locality_gpu);
            row.locality_node_ratio = ratio(row.report.locality_node, base.locality_node);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string format_comparison_table(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-20s %-9s %12s %12s %10s %10s %12s %12s\n", "placement",
                  "mode", "hops_intra", "hops_inter", "loc_gpu", "loc_node", "latency", "vs_base");
    out << line;
    for (const auto& row : rows) {
        std::snprintf(line, sizeof(line), "%-20s %-9s %12ld %12ld %10.4f %10.4f %12.1f %12.4f\n",
                      row.name.c_str(), to_string(row.mode), row.report.hops_intra_node,
                      row.report.hops_inter_node, row.report.locality_gpu, row.report.locality_node,
                      row.report.estimated_latency, row.latency_ratio);
        out << line;
    }
    return out.str();
}

const char* to_string(SimMode mode) { return mode == SimMode::vanilla ? "vanilla" : "coherent"; }

const char* to_string(Tier tier) {
    switch (tier) {
    case Tier::intra_gpu:
        return "intra_gpu";
    case Tier::intra_node:
        return "intra_node";
    default:
        return "inter_node";
    }
}

} // namespace exflow
