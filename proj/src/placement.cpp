// SPDX-License-Identifier: Apache-2.0
#include "exflow/placement.hpp"

#include "exflow/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace exflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------
// Layer-chain subproblem: assign `items` local indices per layer to
// `parts` equal groups; cost couples consecutive layers only. Both the
// single-level solve and each staged subproblem reduce to this.
// ---------------------------------------------------------------------
struct Chain {
    int parts = 1;
    int items = 0;
    std::vector<Eigen::MatrixXd> weights; // layers-1, items x items

    int layers() const { return static_cast<int>(weights.size()) + 1; }
};

struct ChainSolution {
    std::vector<std::vector<int>> groups; // per layer, item -> group
    double objective = 0.0;
};

double pair_cost(const Eigen::MatrixXd& w, const std::vector<int>& s, const std::vector<int>& t) {
    double cost = 0.0;
    for (Eigen::Index a = 0; a < w.rows(); ++a) {
        for (Eigen::Index b = 0; b < w.cols(); ++b) {
            if (w(a, b) != 0.0 && s[a] != t[b]) {
                cost += w(a, b);
            }
        }
    }
    return cost;
}

double chain_objective(const Chain& chain, const std::vector<std::vector<int>>& groups) {
    double total = 0.0;
    for (std::size_t j = 0; j < chain.weights.size(); ++j) {
        total += pair_cost(chain.weights[j], groups[j], groups[j + 1]);
    }
    return total;
}

// All balanced labeled assignments in lexicographic order.
std::vector<std::vector<int8_t>> enumerate_balanced(int items, int parts) {
    const int cap = items / parts;
    std::vector<std::vector<int8_t>> out;
    std::vector<int8_t> current(items, 0);
    std::vector<int> used(parts, 0);
    auto rec = [&](auto&& self, int pos) -> void {
        if (pos == items) {
            out.push_back(current);
            return;
        }
        for (int p = 0; p < parts; ++p) {
            if (used[p] < cap) {
                used[p]++;
                current[pos] = static_cast<int8_t>(p);
                self(self, pos + 1);
                used[p]--;
            }
        }
    };
    rec(rec, 0);
    return out;
}

// ---------------------------------------------------------------------
// Exact DP over the chain. Backward values h[j](s) = best completion cost
// from assignment s at layer j; forward reconstruction takes the lowest
// assignment index among minimizers, yielding the lexicographically
// smallest optimal sequence.
// ---------------------------------------------------------------------
ChainSolution chain_dp(const Chain& chain) {
    const auto assigns = enumerate_balanced(chain.items, chain.parts);
    const int S = static_cast<int>(assigns.size());
    const int L = chain.layers();
    const int n = chain.items;
    const int P = chain.parts;

    // Group indicator matrices shared by every layer.
    std::vector<Eigen::MatrixXd> indicators(P, Eigen::MatrixXd::Zero(S, n));
    for (int s = 0; s < S; ++s) {
        for (int i = 0; i < n; ++i) {
            indicators[assigns[s][i]](s, i) = 1.0;
        }
    }

    std::vector<Eigen::VectorXd> h(L, Eigen::VectorXd::Zero(S));
    const int block = 256;
    for (int j = L - 2; j >= 0; --j) {
        const Eigen::MatrixXd& w = chain.weights[j];
        const double total = w.sum();
        std::vector<Eigen::MatrixXd> partial(P);
        for (int p = 0; p < P; ++p) {
            partial[p].noalias() = indicators[p] * w; // S x n
        }
        Eigen::VectorXd next = Eigen::VectorXd::Constant(S, kInf);
        for (int b0 = 0; b0 < S; b0 += block) {
            const int nb = std::min(block, S - b0);
            Eigen::MatrixXd same = Eigen::MatrixXd::Zero(S, nb);
            for (int p = 0; p < P; ++p) {
                same.noalias() += partial[p] * indicators[p].middleRows(b0, nb).transpose();
            }
            for (int q = 0; q < nb; ++q) {
                const double offset = total + h[j + 1](b0 + q);
                next = next.array().min(offset - same.col(q).array()).matrix();
            }
        }
        h[j] = std::move(next);
    }

    int state = 0;
    for (int s = 1; s < S; ++s) {
        if (h[0](s) < h[0](state)) {
            state = s;
        }
    }

    ChainSolution solution;
    solution.objective = h[0](state);
    solution.groups.resize(L);
    auto record = [&](int layer, int s) {
        solution.groups[layer].assign(assigns[s].begin(), assigns[s].end());
    };
    record(0, state);

    for (int j = 0; j + 1 < L; ++j) {
        const Eigen::MatrixXd& w = chain.weights[j];
        const double total = w.sum();
        // same(s, t) = sum_b v[t(b)](b) with v_p = w^T * indicator_p(s)
        Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, P);
        for (int a = 0; a < n; ++a) {
            v.col(assigns[state][a]) += w.row(a).transpose();
        }
        int best = -1;
        double best_cost = kInf;
        for (int t = 0; t < S; ++t) {
            double same = 0.0;
            for (int b = 0; b < n; ++b) {
                same += v(b, assigns[t][b]);
            }
            const double cand = total - same + h[j + 1](t);
            if (cand < best_cost) {
                best_cost = cand;
                best = t;
            }
        }
        state = best;
        record(j + 1, state);
    }
    return solution;
}

// ---------------------------------------------------------------------
// Simulated annealing over within-layer group swaps.
// ---------------------------------------------------------------------

// Cost change of swapping the groups of items a and b in layer j.
double swap_delta(const Chain& chain, const std::vector<std::vector<int>>& groups, int j, int a,
                  int b) {
    const int ga = groups[j][a];
    const int gb = groups[j][b];
    double delta = 0.0;
    if (j > 0) {
        const Eigen::MatrixXd& w = chain.weights[j - 1];
        const std::vector<int>& prev = groups[j - 1];
        double saa = 0.0, sab = 0.0, sba = 0.0, sbb = 0.0;
        for (int x = 0; x < chain.items; ++x) {
            const int gx = prev[x];
            if (gx == ga) {
                saa += w(x, a);
                sba += w(x, b);
            } else if (gx == gb) {
                sab += w(x, a);
                sbb += w(x, b);
            }
        }
        delta += (saa - sab) + (sbb - sba);
    }
    if (j + 1 < chain.layers()) {
        const Eigen::MatrixXd& w = chain.weights[j];
        const std::vector<int>& next = groups[j + 1];
        double saa = 0.0, sab = 0.0, sba = 0.0, sbb = 0.0;
        for (int y = 0; y < chain.items; ++y) {
            const int gy = next[y];
            if (gy == ga) {
                saa += w(a, y);
                sba += w(b, y);
            } else if (gy == gb) {
                sab += w(a, y);
                sbb += w(b, y);
            }
        }
        delta += (saa - sab) + (sbb - sba);
    }
    return delta;
}

std::vector<int> identity_blocks(int items, int parts) {
    const int cap = items / parts;
    std::vector<int> groups(items);
    for (int i = 0; i < items; ++i) {
        groups[i] = i / cap;
    }
    return groups;
}

std::vector<int> random_balanced(int items, int parts, Rng& rng) {
    std::vector<int> groups = identity_blocks(items, parts);
    shuffle(std::span<int>(groups), rng);
    return groups;
}

// Chain-following construction: layer 0 gets identity blocks, each later
// layer greedily assigns items to the group with the largest incoming
// weight from the previous layer's assignment.
std::vector<std::vector<int>> greedy_init(const Chain& chain) {
    const int n = chain.items;
    const int P = chain.parts;
    const int cap = n / P;
    std::vector<std::vector<int>> groups(chain.layers());
    groups[0] = identity_blocks(n, P);
    for (int j = 1; j < chain.layers(); ++j) {
        const Eigen::MatrixXd& w = chain.weights[j - 1];
        Eigen::MatrixXd gain = Eigen::MatrixXd::Zero(n, P);
        for (int a = 0; a < n; ++a) {
            gain.col(groups[j - 1][a]) += w.row(a).transpose();
        }
        std::vector<int> assigned(n, -1);
        std::vector<int> used(P, 0);
        for (int round = 0; round < n; ++round) {
            int best_item = -1, best_part = -1;
            double best_gain = -kInf;
            for (int b = 0; b < n; ++b) {
                if (assigned[b] >= 0) {
                    continue;
                }
                for (int p = 0; p < P; ++p) {
                    if (used[p] < cap && gain(b, p) > best_gain) {
                        best_gain = gain(b, p);
                        best_item = b;
                        best_part = p;
                    }
                }
            }
            assigned[best_item] = best_part;
            used[best_part]++;
        }
        groups[j] = std::move(assigned);
    }
    return groups;
}

// First-improvement descent until no swap improves; caps sweeps in case of
// pathological float weights.
void polish(const Chain& chain, std::vector<std::vector<int>>& groups) {
    for (int sweep = 0; sweep < 200; ++sweep) {
        bool improved = false;
        for (int j = 0; j < chain.layers(); ++j) {
            for (int a = 0; a < chain.items; ++a) {
                for (int b = a + 1; b < chain.items; ++b) {
                    if (groups[j][a] == groups[j][b]) {
                        continue;
                    }
                    if (swap_delta(chain, groups, j, a, b) < -1e-12) {
                        std::swap(groups[j][a], groups[j][b]);
                        improved = true;
                    }
                }
            }
        }
        if (!improved) {
            break;
        }
    }
}

double mean_positive_weight(const Chain& chain) {
    double sum = 0.0;
    long count = 0;
    for (const auto& w : chain.weights) {
        sum += w.sum(); // counts are non-negative
        count += (w.array() > 0.0).count();
    }
    return count > 0 ? sum / static_cast<double>(count) : 1.0;
}

ChainSolution chain_anneal(const Chain& chain, const AnnealParams& params, long& iterations_out) {
    const int L = chain.layers();
    const int n = chain.items;
    if (chain.parts == 1) {
        // one group, nothing to swap
        ChainSolution trivial;
        trivial.groups.assign(L, std::vector<int>(n, 0));
        trivial.objective = 0.0;
        iterations_out = 0;
        return trivial;
    }
    const long iters = params.max_iters > 0 ? params.max_iters : 20000L * L;
    const double t0 =
        params.initial_temperature > 0.0 ? params.initial_temperature : mean_positive_weight(chain);

    ChainSolution best;
    best.objective = kInf;
    for (int restart = 0; restart < params.restarts; ++restart) {
        Rng rng(seed_stream(params.seed, restart));
        std::vector<std::vector<int>> groups;
        if (restart == 0) {
            groups = greedy_init(chain);
        } else {
            groups.resize(L);
            for (auto& layer : groups) {
                layer = random_balanced(n, chain.parts, rng);
            }
        }
        double objective = chain_objective(chain, groups);
        std::vector<std::vector<int>> run_best = groups;
        double run_best_objective = objective;

        double temperature = t0;
        for (long it = 0; it < iters; ++it) {
            const int j = static_cast<int>(rng.below(L));
            const int a = rng.below_int(n);
            int b = rng.below_int(n);
            while (groups[j][b] == groups[j][a]) {
                b = rng.below_int(n);
            }
            const double delta = swap_delta(chain, groups, j, a, b);
            bool accept = delta <= 0.0;
            if (!accept) {
                accept = rng.uniform01() < std::exp(-delta / std::max(temperature, 1e-300));
            }
            if (accept) {
                std::swap(groups[j][a], groups[j][b]);
                objective += delta;
                if (objective < run_best_objective - 1e-12) {
                    run_best_objective = objective;
                    run_best = groups;
                }
            }
            temperature *= params.cooling;
        }

        polish(chain, run_best);
        run_best_objective = chain_objective(chain, run_best);
        if (run_best_objective < best.objective - 1e-12) {
            best.objective = run_best_objective;
            best.groups = std::move(run_best);
        }
    }
    iterations_out = static_cast<long>(params.restarts) * iters;
    return best;
}

Chain make_chain(const TransitionCounts& counts, int partitions) {
    if (counts.gap != 1) {
        throw std::invalid_argument("placement solving requires gap-1 transition counts");
    }
    if (partitions < 1 || counts.num_experts % partitions != 0) {
        throw std::invalid_argument("num_experts " + std::to_string(counts.num_experts) +
                                    " not divisible by partitions " + std::to_string(partitions));
    }
    Chain chain;
    chain.parts = partitions;
    chain.items = counts.num_experts;
    chain.weights.reserve(counts.matrices.size());
    for (const auto& m : counts.matrices) {
        chain.weights.push_back(m.cast<double>());
    }
    return chain;
}

Placement placement_from_groups(const std::vector<std::vector<int>>& groups, int num_experts,
                                int partitions) {
    Placement placement;
    placement.num_experts = num_experts;
    placement.num_layers = static_cast<int>(groups.size());
    placement.num_nodes = 1;
    placement.gpus_per_node = partitions;
    placement.assign.resize(placement.num_layers, num_experts);
    for (int j = 0; j < placement.num_layers; ++j) {
        for (int i = 0; i < num_experts; ++i) {
            placement.assign(j, i) = groups[j][i];
        }
    }
    return placement;
}

void require_feasible_state_count(int items, int parts, long state_cap) {
    const long states = balanced_assignment_count(items, parts, state_cap);
    if (states > state_cap) {
        throw std::invalid_argument(
            "balanced state space exceeds cap " + std::to_string(state_cap) + " for " +
            std::to_string(items) + " experts in " + std::to_string(parts) +
            " partitions; use the local-search solver (anneal)");
    }
}

std::string format_weight(double w) {
    char buf[64];
    if (w == std::floor(w) && std::abs(w) < 1e15) {
        std::snprintf(buf, sizeof(buf), "%.0f", w);
    } else {
        std::snprintf(buf, sizeof(buf), "%.12g", w);
    }
    return buf;
}

} // namespace

void Topology::validate() const {
    if (num_nodes < 1 || gpus_per_node < 1) {
        throw std::invalid_argument("topology must have at least one node and one GPU per node");
    }
    if (intra_node_hop_cost < 0.0 || inter_node_hop_cost < intra_node_hop_cost) {
        throw std::invalid_argument("hop costs must satisfy inter >= intra >= 0");
    }
}

void Placement::validate() const {
    if (num_experts < 1 || num_layers < 1) {
        throw std::invalid_argument("placement must cover at least one expert and layer");
    }
    if (num_nodes < 1 || gpus_per_node < 1) {
        throw std::invalid_argument("placement grid must be at least 1x1");
    }
    if (assign.rows() != num_layers || assign.cols() != num_experts) {
        throw std::invalid_argument("placement table shape mismatch");
    }
    const int gpus = total_gpus();
    if (num_experts % gpus != 0) {
        throw std::invalid_argument("num_experts " + std::to_string(num_experts) +
                                    " not divisible by total GPUs " + std::to_string(gpus));
    }
    const int capacity = num_experts / gpus;
    std::vector<int> load(gpus);
    for (int j = 0; j < num_layers; ++j) {
        std::fill(load.begin(), load.end(), 0);
        for (int i = 0; i < num_experts; ++i) {
            const int gpu = assign(j, i);
            if (gpu < 0 || gpu >= gpus) {
                throw std::invalid_argument("gpu id " + std::to_string(gpu) + " out of range [0," +
                                            std::to_string(gpus) + ") at layer " + std::to_string(j));
            }
            load[gpu]++;
        }
        for (int g = 0; g < gpus; ++g) {
            if (load[g] != capacity) {
                throw std::invalid_argument("layer " + std::to_string(j) + " places " +
                                            std::to_string(load[g]) + " experts on gpu " +
                                            std::to_string(g) + ", expected " +
                                            std::to_string(capacity));
            }
        }
    }
}

Placement regrid(Placement placement, int num_nodes, int gpus_per_node) {
    if (num_nodes * gpus_per_node != placement.total_gpus()) {
        throw std::invalid_argument("regrid must preserve the total GPU count");
    }
    placement.num_nodes = num_nodes;
    placement.gpus_per_node = gpus_per_node;
    placement.validate();
    return placement;
}

Placement contiguous_placement(int num_experts, int num_layers, const Topology& topology) {
    topology.validate();
    const int gpus = topology.total_gpus();
    if (num_experts % gpus != 0) {
        throw std::invalid_argument("num_experts not divisible by total GPUs");
    }
    Placement placement;
    placement.num_experts = num_experts;
    placement.num_layers = num_layers;
    placement.num_nodes = topology.num_nodes;
    placement.gpus_per_node = topology.gpus_per_node;
    placement.assign.resize(num_layers, num_experts);
    const int capacity = num_experts / gpus;
    for (int j = 0; j < num_layers; ++j) {
        for (int i = 0; i < num_experts; ++i) {
            placement.assign(j, i) = i / capacity;
        }
    }
    placement.validate();
    return placement;
}

Placement random_placement(int num_experts, int num_layers, const Topology& topology,
                           std::uint64_t seed) {
    topology.validate();
    const int gpus = topology.total_gpus();
    if (num_experts % gpus != 0) {
        throw std::invalid_argument("num_experts not divisible by total GPUs");
    }
    Placement placement;
    placement.num_experts = num_experts;
    placement.num_layers = num_layers;
    placement.num_nodes = topology.num_nodes;
    placement.gpus_per_node = topology.gpus_per_node;
    placement.assign.resize(num_layers, num_experts);
    Rng rng(seed);
    for (int j = 0; j < num_layers; ++j) {
        std::vector<int> groups = random_balanced(num_experts, gpus, rng);
        for (int i = 0; i < num_experts; ++i) {
            placement.assign(j, i) = groups[i];
        }
    }
    placement.validate();
    return placement;
}

IlpModel build_ilp(const TransitionCounts& counts, int partitions, Level level) {
    if (counts.gap != 1) {
        throw std::invalid_argument("the placement program is defined on gap-1 counts");
    }
    if (partitions < 1 || counts.num_experts % partitions != 0) {
        throw std::invalid_argument("num_experts " + std::to_string(counts.num_experts) +
                                    " not divisible by partitions " + std::to_string(partitions));
    }
    IlpModel model;
    model.num_experts = counts.num_experts;
    model.num_layers = counts.num_layers;
    model.partitions = partitions;
    model.level = level;
    for (int j = 0; j < counts.num_layer_pairs(); ++j) {
        const CountMatrix& m = counts.matrices[j];
        for (int a = 0; a < counts.num_experts; ++a) {
            for (int b = 0; b < counts.num_experts; ++b) {
                if (m(a, b) > 0) {
                    model.pairs.push_back({j, a, b, static_cast<double>(m(a, b))});
                }
            }
        }
    }
    return model;
}

std::string export_lp(const IlpModel& model) {
    std::ostringstream out;
    out << "Minimize\n obj:";
    if (model.pairs.empty()) {
        out << " 0";
    } else {
        bool first = true;
        for (const auto& pair : model.pairs) {
            out << (first ? " " : " + ") << format_weight(pair.weight) << " R_" << pair.from_expert
                << "_" << pair.to_expert << "_" << pair.source_layer;
            first = false;
        }
    }
    out << "\nSubject To\n";
    const int capacity = model.num_experts / model.partitions;
    for (int j = 0; j < model.num_layers; ++j) {
        for (int p = 0; p < model.partitions; ++p) {
            out << " balance_" << j << "_" << p << ":";
            for (int i = 0; i < model.num_experts; ++i) {
                out << (i == 0 ? " " : " + ") << "x_" << i << "_" << j << "_" << p;
            }
            out << " = " << capacity << "\n";
        }
    }
    for (int j = 0; j < model.num_layers; ++j) {
        for (int i = 0; i < model.num_experts; ++i) {
            out << " excl_" << i << "_" << j << ":";
            for (int p = 0; p < model.partitions; ++p) {
                out << (p == 0 ? " " : " + ") << "x_" << i << "_" << j << "_" << p;
            }
            out << " = 1\n";
        }
    }
    for (const auto& pair : model.pairs) {
        const std::string r = "R_" + std::to_string(pair.from_expert) + "_" +
                              std::to_string(pair.to_expert) + "_" +
                              std::to_string(pair.source_layer);
        for (int p = 0; p < model.partitions; ++p) {
            out << " cross_lo_" << pair.from_expert << "_" << pair.to_expert << "_"
                << pair.source_layer << "_" << p << ": " << r << " - x_" << pair.from_expert << "_"
                << pair.source_layer << "_" << p << " + x_" << pair.to_expert << "_"
                << pair.source_layer + 1 << "_" << p << " >= 0\n";
            out << " cross_hi_" << pair.from_expert << "_" << pair.to_expert << "_"
                << pair.source_layer << "_" << p << ": " << r << " + x_" << pair.from_expert << "_"
                << pair.source_layer << "_" << p << " - x_" << pair.to_expert << "_"
                << pair.source_layer + 1 << "_" << p << " >= 0\n";
        }
    }
    out << "Binary\n";
    for (int i = 0; i < model.num_experts; ++i) {
        for (int j = 0; j < model.num_layers; ++j) {
            for (int p = 0; p < model.partitions; ++p) {
                out << " x_" << i << "_" << j << "_" << p << "\n";
            }
        }
    }
    for (const auto& pair : model.pairs) {
        out << " R_" << pair.from_expert << "_" << pair.to_expert << "_" << pair.source_layer
            << "\n";
    }
    out << "End\n";
    return out.str();
}

double objective_crossings(const TransitionCounts& counts, const Placement& placement, Level level) {
    if (counts.num_experts != placement.num_experts || counts.num_layers != placement.num_layers) {
        throw std::invalid_argument("counts and placement shapes disagree");
    }
    double total = 0.0;
    for (int j = 0; j < counts.num_layer_pairs(); ++j) {
        const CountMatrix& m = counts.matrices[j];
        for (int a = 0; a < counts.num_experts; ++a) {
            for (int b = 0; b < counts.num_experts; ++b) {
                if (m(a, b) == 0) {
                    continue;
                }
                int from = placement.assign(j, a);
                int to = placement.assign(j + counts.gap, b);
                if (level == Level::node) {
                    from = placement.node_of(from);
                    to = placement.node_of(to);
                }
                if (from != to) {
                    total += static_cast<double>(m(a, b));
                }
            }
        }
    }
    return total;
}

long balanced_assignment_count(int items, int parts, long cap) {
    if (parts < 1 || items < 1 || items % parts != 0) {
        throw std::invalid_argument("items must be divisible by parts");
    }
    const int k = items / parts;
    unsigned __int128 product = 1;
    int remaining = items;
    for (int p = 0; p < parts; ++p) {
        unsigned __int128 binom = 1;
        for (int i = 1; i <= k; ++i) {
            binom = binom * static_cast<unsigned>(remaining - k + i) / static_cast<unsigned>(i);
            if (binom > static_cast<unsigned __int128>(cap) * 2 + 2) {
                return cap + 1;
            }
        }
        product *= binom;
        if (product > static_cast<unsigned __int128>(cap)) {
            return cap + 1;
        }
        remaining -= k;
    }
    return static_cast<long>(product);
}

void AnnealParams::validate() const {
    if (restarts < 1) {
        throw std::invalid_argument("restarts must be >= 1");
    }
    if (max_iters < 0) {
        throw std::invalid_argument("max_iters must be >= 0 (0 selects the default)");
    }
    if (cooling <= 0.0 || cooling > 1.0) {
        throw std::invalid_argument("cooling must be in (0,1]");
    }
    if (initial_temperature < 0.0) {
        throw std::invalid_argument("initial_temperature must be >= 0 (0 selects the default)");
    }
}

std::pair<Placement, SolveReport> solve_exact_dp(const TransitionCounts& counts, int partitions,
                                                 long state_cap) {
    Chain chain = make_chain(counts, partitions);
    require_feasible_state_count(chain.items, chain.parts, state_cap);

    ChainSolution solution = chain_dp(chain);
    Placement placement = placement_from_groups(solution.groups, counts.num_experts, partitions);
    placement.validate();

    SolveReport report;
    report.solver = "exact-dp";
    report.objective = solution.objective;
    report.iterations = balanced_assignment_count(chain.items, chain.parts, state_cap);
    report.restarts = 0;
    report.optimality_gap = 0.0;
    return {std::move(placement), std::move(report)};
}

std::pair<Placement, SolveReport> solve_local_search(const TransitionCounts& counts, int partitions,
                                                     const AnnealParams& params) {
    params.validate();
    Chain chain = make_chain(counts, partitions);
    long iterations = 0;
    ChainSolution solution = chain_anneal(chain, params, iterations);
    Placement placement = placement_from_groups(solution.groups, counts.num_experts, partitions);
    placement.validate();

    SolveReport report;
    report.solver = "local-search";
    report.objective = solution.objective;
    report.seed = params.seed;
    report.iterations = iterations;
    report.restarts = params.restarts;
    return {std::move(placement), std::move(report)};
}

std::pair<Placement, SolveReport> solve_staged(const TransitionCounts& counts,
                                               const Topology& topology, const AnnealParams& params,
                                               long state_cap) {
    params.validate();
    topology.validate();
    if (counts.gap != 1) {
        throw std::invalid_argument("placement solving requires gap-1 transition counts");
    }
    if (counts.num_experts % topology.num_nodes != 0 ||
        counts.num_experts % topology.total_gpus() != 0) {
        throw std::invalid_argument("num_experts must be divisible by node and GPU counts");
    }

    const int num_experts = counts.num_experts;
    const int num_layers = counts.num_layers;

    auto solve_chain = [&](const Chain& chain, std::uint64_t seed, long& iterations) {
        if (balanced_assignment_count(chain.items, chain.parts, state_cap) <= state_cap) {
            iterations += balanced_assignment_count(chain.items, chain.parts, state_cap);
            return chain_dp(chain);
        }
        AnnealParams stage_params = params;
        stage_params.seed = seed;
        long anneal_iters = 0;
        ChainSolution solution = chain_anneal(chain, stage_params, anneal_iters);
        iterations += anneal_iters;
        return solution;
    };

    long iterations = 0;
    Placement placement;

    if (topology.num_nodes == 1) {
        // The hierarchy collapses; solve the single-level GPU problem.
        Chain chain = make_chain(counts, topology.total_gpus());
        ChainSolution solution = solve_chain(chain, params.seed, iterations);
        placement = placement_from_groups(solution.groups, num_experts, topology.total_gpus());
        placement = regrid(std::move(placement), topology.num_nodes, topology.gpus_per_node);
    } else {
        // Stage 1: partition experts across nodes.
        Chain node_chain = make_chain(counts, topology.num_nodes);
        ChainSolution node_solution = solve_chain(node_chain, params.seed, iterations);

        placement.num_experts = num_experts;
        placement.num_layers = num_layers;
        placement.num_nodes = topology.num_nodes;
        placement.gpus_per_node = topology.gpus_per_node;
        placement.assign.resize(num_layers, num_experts);

        // Stage 2: within each node, partition its per-layer experts across
        // the node's GPUs. Pairs that already cross nodes are excluded; that
        // cost is fixed by stage 1.
        for (int node = 0; node < topology.num_nodes; ++node) {
            std::vector<std::vector<int>> members(num_layers);
            for (int j = 0; j < num_layers; ++j) {
                for (int i = 0; i < num_experts; ++i) {
                    if (node_solution.groups[j][i] == node) {
                        members[j].push_back(i);
                    }
                }
            }
            const int sub_items = static_cast<int>(members[0].size());
            Chain sub_chain;
            sub_chain.parts = topology.gpus_per_node;
            sub_chain.items = sub_items;
            sub_chain.weights.reserve(num_layers - 1);
            for (int j = 0; j + 1 < num_layers; ++j) {
                Eigen::MatrixXd w(sub_items, sub_items);
                for (int a = 0; a < sub_items; ++a) {
                    for (int b = 0; b < sub_items; ++b) {
                        w(a, b) = static_cast<double>(counts.matrices[j](members[j][a], members[j + 1][b]));
                    }
                }
                sub_chain.weights.push_back(std::move(w));
            }
            ChainSolution sub_solution =
                solve_chain(sub_chain, seed_stream(params.seed, 1 + node), iterations);
            for (int j = 0; j < num_layers; ++j) {
                for (int a = 0; a < sub_items; ++a) {
                    placement.assign(j, members[j][a]) =
                        node * topology.gpus_per_node + sub_solution.groups[j][a];
                }
            }
        }
        placement.validate();
    }

    const double inter = objective_crossings(counts, placement, Level::node);
    const double total = objective_crossings(counts, placement, Level::gpu);

    SolveReport report;
    report.solver = "staged";
    report.objective = total;
    report.seed = params.seed;
    report.iterations = iterations;
    report.restarts = params.restarts;
    report.inter_node_crossings = inter;
    report.intra_node_crossings = total - inter;
    report.weighted_cost =
        inter * topology.inter_node_hop_cost + (total - inter) * topology.intra_node_hop_cost;
    return {std::move(placement), std::move(report)};
}

} // namespace exflow
