// SPDX-License-Identifier: Apache-2.0
//
// exflow command line: trace generation, affinity estimation, placement
// solving, communication replay, sample-size sweeps and holdout checks.
// Machine-readable output goes to files only; logs go to stderr.
// Exit codes: 0 success, 1 runtime/data error, 2 usage/validation error.

#include <CLI11.hpp>

#include "exflow/json_io.hpp"
#include "exflow/placement.hpp"
#include "exflow/rng.hpp"
#include "exflow/sim.hpp"
#include "exflow/synth.hpp"
#include "exflow/trace.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace exflow;

namespace {

class CommandRun {
  public:
    explicit CommandRun(std::string command) : start_(std::chrono::steady_clock::now()) {
        manifest_.command = std::move(command);
    }

    nlohmann::json& params() { return manifest_.parameters; }
    void add_input(const fs::path& path) { manifest_.inputs.push_back(path.string()); }
    void add_output(const fs::path& path) { manifest_.outputs.push_back(path.string()); }
    nlohmann::json core() const { return manifest_core(manifest_); }

    /// Writes the full manifest (with wall clock) next to the primary output.
    void write_sidecar(const fs::path& primary) {
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        manifest_.wall_clock_ms =
            std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(elapsed).count();
        fs::path sidecar = primary;
        sidecar += ".manifest.json";
        save_json(sidecar, nlohmann::json(manifest_));
    }

  private:
    RunManifest manifest_;
    std::chrono::steady_clock::time_point start_;
};

struct SolverFlags {
    std::string solver = "staged";
    std::uint64_t seed = 0;
    int restarts = 8;
    long max_iters = 0;
    double initial_temperature = 0.0;
    double cooling = 0.999;
    long state_cap = kDefaultStateCap;

    void add_to(CLI::App* cmd, bool with_seed = true) {
        cmd->add_option("--solver", solver, "Solver: exact, anneal or staged")
            ->check(CLI::IsMember({"exact", "anneal", "staged"}))
            ->capture_default_str();
        if (with_seed) {
            cmd->add_option("--seed", seed, "Solver seed")->capture_default_str();
        }
        cmd->add_option("--restarts", restarts, "Annealing restarts")->capture_default_str();
        cmd->add_option("--iters", max_iters, "Annealing iterations per restart (0: 20000*L)")
            ->capture_default_str();
        cmd->add_option("--temp", initial_temperature,
                        "Initial temperature (0: mean positive weight)")
            ->capture_default_str();
        cmd->add_option("--cooling", cooling, "Geometric cooling factor")->capture_default_str();
        cmd->add_option("--state-cap", state_cap, "Exact-DP state cap")->capture_default_str();
    }

    AnnealParams anneal_params() const {
        AnnealParams params;
        params.restarts = restarts;
        params.max_iters = max_iters;
        params.initial_temperature = initial_temperature;
        params.cooling = cooling;
        params.seed = seed;
        return params;
    }

    nlohmann::json to_json() const {
        return {{"solver", solver}, {"seed", seed},
                {"restarts", restarts}, {"iters", max_iters},
                {"temp", initial_temperature}, {"cooling", cooling},
                {"state_cap", state_cap}};
    }
};

struct TopologyFlags {
    int nodes = 1;
    int gpus_per_node = 1;
    double intra_cost = 1.0;
    double inter_cost = 4.0;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--nodes", nodes, "Number of nodes")->capture_default_str();
        cmd->add_option("--gpus-per-node", gpus_per_node, "GPUs per node")->required();
        cmd->add_option("--intra-cost", intra_cost, "Intra-node hop cost")->capture_default_str();
        cmd->add_option("--inter-cost", inter_cost, "Inter-node hop cost")->capture_default_str();
    }

    Topology topology() const {
        Topology topo;
        topo.num_nodes = nodes;
        topo.gpus_per_node = gpus_per_node;
        topo.intra_node_hop_cost = intra_cost;
        topo.inter_node_hop_cost = inter_cost;
        topo.validate();
        return topo;
    }

    nlohmann::json to_json() const {
        return {{"nodes", nodes},
                {"gpus_per_node", gpus_per_node},
                {"intra_cost", intra_cost},
                {"inter_cost", inter_cost}};
    }
};

std::pair<Placement, SolveReport> run_solver(const TransitionCounts& counts,
                                             const Topology& topology, const SolverFlags& flags) {
    const int gpus = topology.total_gpus();
    if (flags.solver == "exact") {
        auto [placement, report] = solve_exact_dp(counts, gpus, flags.state_cap);
        return {regrid(std::move(placement), topology.num_nodes, topology.gpus_per_node),
                std::move(report)};
    }
    if (flags.solver == "anneal") {
        auto [placement, report] = solve_local_search(counts, gpus, flags.anneal_params());
        if (balanced_assignment_count(counts.num_experts, gpus, flags.state_cap) <=
            flags.state_cap) {
            auto exact = solve_exact_dp(counts, gpus, flags.state_cap);
            report.optimality_gap = report.objective - exact.second.objective;
        }
        return {regrid(std::move(placement), topology.num_nodes, topology.gpus_per_node),
                std::move(report)};
    }
    return solve_staged(counts, topology, flags.anneal_params(), flags.state_cap);
}

SimReport evaluate_locality(const RoutingTrace& trace, const Placement& placement,
                            const Topology& topology) {
    SimConfig config;
    config.topology = topology;
    config.mode = SimMode::coherent;
    return simulate(trace, placement, config);
}

double safe_ratio(double value, double reference) {
    if (reference != 0.0) {
        return value / reference;
    }
    return value == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        values.push_back(std::stoi(item));
    }
    return values;
}

// ----------------------------------------------------------------- gen --

struct GenArgs {
    int experts = 0;
    int layers = 0;
    int tokens = 0;
    double alpha = 0.5;
    int groups = 1;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_gen(const GenArgs& args) {
    CommandRun run("gen");
    SynthConfig config;
    config.num_experts = args.experts;
    config.num_layers = args.layers;
    config.num_tokens = args.tokens;
    config.affinity_strength = args.alpha;
    config.planted_groups = args.groups;
    config.seed = args.seed;
    config.validate();

    run.params() = {{"experts", args.experts}, {"layers", args.layers}, {"tokens", args.tokens},
                    {"alpha", args.alpha},     {"groups", args.groups}, {"seed", args.seed}};
    run.add_output(args.out);

    const RoutingTrace trace = generate_markov_trace(config);
    save_trace(args.out, trace);
    run.write_sidecar(args.out);
    std::cerr << "[exflow] wrote " << trace.num_tokens() << " token paths to " << args.out << "\n";
}

// ------------------------------------------------------------- affinity --

struct AffinityArgs {
    std::string trace;
    int gap = 1;
    std::string out_dir;
};

void cmd_affinity(const AffinityArgs& args) {
    CommandRun run("affinity");
    run.params() = {{"trace", args.trace}, {"gap", args.gap}, {"out_dir", args.out_dir}};
    run.add_input(args.trace);

    const RoutingTrace trace = load_trace(args.trace);
    const TransitionCounts counts = count_transitions(trace, args.gap);
    const AffinityMatrix affinity = conditional_probabilities(counts);

    fs::create_directories(args.out_dir);
    nlohmann::json layers = nlohmann::json::array();
    for (int j = 0; j < affinity.num_layer_pairs(); ++j) {
        const fs::path csv_path =
            fs::path(args.out_dir) / ("affinity_layer" + std::to_string(j) + ".csv");
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) {
            throw std::runtime_error("cannot write " + csv_path.string());
        }
        csv << export_heatmap_csv(affinity, j);
        run.add_output(csv_path);

        std::vector<double> row_max(affinity.num_experts, 0.0);
        std::vector<double> row_entropy(affinity.num_experts, 0.0);
        std::vector<bool> seen(affinity.num_experts, false);
        double max_sum = 0.0;
        int seen_rows = 0;
        for (int a = 0; a < affinity.num_experts; ++a) {
            seen[a] = affinity.seen[j](a);
            if (!seen[a]) {
                continue;
            }
            ++seen_rows;
            row_max[a] = affinity.matrices[j].row(a).maxCoeff();
            max_sum += row_max[a];
            double entropy = 0.0;
            for (int b = 0; b < affinity.num_experts; ++b) {
                const double p = affinity.matrices[j](a, b);
                if (p > 0.0) {
                    entropy -= p * std::log2(p);
                }
            }
            row_entropy[a] = entropy;
        }
        layers.push_back({{"source_layer", j},
                          {"row_max", row_max},
                          {"row_entropy", row_entropy},
                          {"seen", seen},
                          {"mean_row_max", seen_rows > 0 ? max_sum / seen_rows : 0.0}});
    }

    const fs::path summary_path = fs::path(args.out_dir) / "summary.json";
    run.add_output(summary_path);
    save_json(summary_path, {{"manifest", run.core()},
                             {"experts", affinity.num_experts},
                             {"layers", affinity.num_layers},
                             {"gap", affinity.gap},
                             {"layer_pairs", layers}});
    run.write_sidecar(summary_path);
    std::cerr << "[exflow] wrote " << affinity.num_layer_pairs() << " affinity CSVs to "
              << args.out_dir << "\n";
}

// ---------------------------------------------------------------- solve --

struct SolveArgs {
    std::string trace;
    TopologyFlags topology;
    SolverFlags solver;
    std::string out;
};

void cmd_solve(const SolveArgs& args) {
    CommandRun run("solve");
    run.params() = {{"trace", args.trace},
                    {"topology", args.topology.to_json()},
                    {"solver", args.solver.to_json()}};
    run.add_input(args.trace);
    run.add_output(args.out);

    const RoutingTrace trace = load_trace(args.trace);
    const TransitionCounts counts = count_transitions(trace, 1);
    const Topology topology = args.topology.topology();

    auto [placement, report] = run_solver(counts, topology, args.solver);
    placement.validate();

    nlohmann::json out = placement;
    out["report"] = report;
    out["manifest"] = run.core();
    save_json(args.out, out);
    run.write_sidecar(args.out);
    std::cerr << "[exflow] " << report.solver << " objective " << report.objective << " -> "
              << args.out << "\n";
}

// ------------------------------------------------------------- simulate --

struct SimulateArgs {
    std::string trace;
    std::vector<std::string> placements;
    std::string mode = "both";
    int tokens_per_gpu = 1;
    int iterations = 1;
    std::string homes;
    double intra_cost = 1.0;
    double inter_cost = 4.0;
    int nodes = 0; // 0: take the grid from the placement files
    int gpus_per_node = 0;
    std::string out;
};

void cmd_simulate(const SimulateArgs& args) {
    CommandRun run("simulate");
    run.params() = {{"trace", args.trace},           {"placements", args.placements},
                    {"mode", args.mode},             {"tokens_per_gpu", args.tokens_per_gpu},
                    {"iterations", args.iterations}, {"homes", args.homes},
                    {"intra_cost", args.intra_cost}, {"inter_cost", args.inter_cost}};
    run.add_input(args.trace);
    run.add_output(args.out);

    const RoutingTrace trace = load_trace(args.trace);

    std::vector<std::pair<std::string, Placement>> placements;
    for (const std::string& spec : args.placements) {
        std::string name;
        std::string path = spec;
        if (const auto eq = spec.find('='); eq != std::string::npos) {
            name = spec.substr(0, eq);
            path = spec.substr(eq + 1);
        } else {
            name = fs::path(spec).stem().string();
        }
        run.add_input(path);
        placements.emplace_back(name, load_placement(path));
    }

    const Placement& first = placements.front().second;
    for (const auto& [name, placement] : placements) {
        if (placement.num_nodes != first.num_nodes ||
            placement.gpus_per_node != first.gpus_per_node) {
            throw std::invalid_argument("placements disagree on the GPU grid");
        }
    }
    if (args.nodes > 0 && args.nodes != first.num_nodes) {
        throw std::invalid_argument("--nodes does not match the placement files");
    }
    if (args.gpus_per_node > 0 && args.gpus_per_node != first.gpus_per_node) {
        throw std::invalid_argument("--gpus-per-node does not match the placement files");
    }

    SimConfig config;
    config.topology.num_nodes = first.num_nodes;
    config.topology.gpus_per_node = first.gpus_per_node;
    config.topology.intra_node_hop_cost = args.intra_cost;
    config.topology.inter_node_hop_cost = args.inter_cost;
    config.tokens_per_gpu = args.tokens_per_gpu;
    config.iterations = args.iterations;
    if (!args.homes.empty()) {
        config.homes = parse_int_list(args.homes);
    }

    nlohmann::json out;
    out["manifest"] = run.core();
    if (args.mode == "both") {
        const auto rows = compare_modes(trace, placements, config);
        out["baseline"] = "contiguous placement, vanilla mode";
        out["rows"] = rows;
        fs::path table_path = fs::path(args.out);
        table_path.replace_extension(".txt");
        std::ofstream table(table_path, std::ios::binary);
        if (!table) {
            throw std::runtime_error("cannot write " + table_path.string());
        }
        table << format_comparison_table(rows);
        run.add_output(table_path);
    } else {
        config.mode = args.mode == "vanilla" ? SimMode::vanilla : SimMode::coherent;
        nlohmann::json results = nlohmann::json::array();
        for (const auto& [name, placement] : placements) {
            results.push_back({{"placement", name},
                               {"mode", args.mode},
                               {"report", simulate(trace, placement, config)}});
        }
        out["results"] = results;
    }
    save_json(args.out, out);
    run.write_sidecar(args.out);
    std::cerr << "[exflow] simulated " << placements.size() << " placement(s) -> " << args.out
              << "\n";
}

// ---------------------------------------------------------------- sweep --

struct SweepArgs {
    std::string trace;
    std::string samples;
    int repeats = 5;
    std::uint64_t seed = 0;
    TopologyFlags topology;
    SolverFlags solver;
    std::string out;
};

void cmd_sweep(const SweepArgs& args) {
    CommandRun run("sweep");
    run.params() = {{"trace", args.trace},
                    {"samples", args.samples},
                    {"repeats", args.repeats},
                    {"seed", args.seed},
                    {"topology", args.topology.to_json()},
                    {"solver", args.solver.to_json()}};
    run.add_input(args.trace);
    run.add_output(args.out);

    if (args.repeats < 1) {
        throw std::invalid_argument("--repeats must be >= 1");
    }
    const RoutingTrace trace = load_trace(args.trace);
    const Topology topology = args.topology.topology();
    const std::vector<int> samples = parse_int_list(args.samples);
    if (samples.empty()) {
        throw std::invalid_argument("--samples must list at least one size");
    }
    for (const int size : samples) {
        if (size < 1 || size > trace.num_tokens()) {
            throw std::invalid_argument("sample size " + std::to_string(size) + " out of range [1," +
                                        std::to_string(trace.num_tokens()) + "]");
        }
    }

    const Placement baseline = contiguous_placement(trace.num_experts, trace.num_layers, topology);
    SimConfig baseline_config;
    baseline_config.topology = topology;
    baseline_config.mode = SimMode::vanilla;
    const SimReport baseline_report = simulate(trace, baseline, baseline_config);

    std::ofstream csv(args.out, std::ios::binary);
    if (!csv) {
        throw std::runtime_error("cannot write " + args.out);
    }
    csv << "sample_size,repeats,locality_gpu_mean,locality_gpu_std,locality_node_mean,"
           "locality_node_std,latency_ratio_mean,latency_ratio_std\n";

    char line[256];
    for (const int size : samples) {
        std::vector<double> loc_gpu, loc_node, latency_ratio;
        for (int repeat = 0; repeat < args.repeats; ++repeat) {
            const std::uint64_t stream = seed_stream(seed_stream(args.seed, size), repeat);
            const RoutingTrace sub = subsample_tokens(trace, size, stream);
            const TransitionCounts counts = count_transitions(sub, 1);
            SolverFlags solver = args.solver;
            solver.seed = seed_stream(stream, 1);
            auto [placement, report] = run_solver(counts, topology, solver);
            const SimReport eval = evaluate_locality(trace, placement, topology);
            loc_gpu.push_back(eval.locality_gpu);
            loc_node.push_back(eval.locality_node);
            latency_ratio.push_back(
                safe_ratio(eval.estimated_latency, baseline_report.estimated_latency));
        }
        auto mean = [](const std::vector<double>& v) {
            return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        };
        auto stddev = [&](const std::vector<double>& v) {
            const double m = mean(v);
            double acc = 0.0;
            for (const double x : v) {
                acc += (x - m) * (x - m);
            }
            return std::sqrt(acc / static_cast<double>(v.size()));
        };
        std::snprintf(line, sizeof(line), "%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", size,
                      args.repeats, mean(loc_gpu), stddev(loc_gpu), mean(loc_node),
                      stddev(loc_node), mean(latency_ratio), stddev(latency_ratio));
        csv << line;
        std::cerr << "[exflow] sweep size " << size << ": locality_gpu " << mean(loc_gpu) << "\n";
    }
    csv.close();
    run.write_sidecar(args.out);
}

// -------------------------------------------------------------- holdout --

struct HoldoutArgs {
    std::string profile_trace;
    std::string eval_trace;
    TopologyFlags topology;
    SolverFlags solver;
    std::string out;
};

void cmd_holdout(const HoldoutArgs& args) {
    CommandRun run("holdout");
    run.params() = {{"profile_trace", args.profile_trace},
                    {"eval_trace", args.eval_trace},
                    {"topology", args.topology.to_json()},
                    {"solver", args.solver.to_json()}};
    run.add_input(args.profile_trace);
    run.add_input(args.eval_trace);
    run.add_output(args.out);

    const RoutingTrace profile = load_trace(args.profile_trace);
    const RoutingTrace eval = load_trace(args.eval_trace);
    if (profile.num_experts != eval.num_experts || profile.num_layers != eval.num_layers) {
        throw std::invalid_argument("profile and eval traces disagree on E or L");
    }

    const Topology topology = args.topology.topology();
    const TransitionCounts counts = count_transitions(profile, 1);
    auto [placement, report] = run_solver(counts, topology, args.solver);

    const SimReport on_profile = evaluate_locality(profile, placement, topology);
    const SimReport on_eval = evaluate_locality(eval, placement, topology);

    save_json(args.out,
              {{"manifest", run.core()},
               {"solve_report", report},
               {"profile",
                {{"locality_gpu", on_profile.locality_gpu},
                 {"locality_node", on_profile.locality_node}}},
               {"eval",
                {{"locality_gpu", on_eval.locality_gpu},
                 {"locality_node", on_eval.locality_node}}},
               {"ratios",
                {{"locality_gpu", safe_ratio(on_eval.locality_gpu, on_profile.locality_gpu)},
                 {"locality_node",
                  safe_ratio(on_eval.locality_node, on_profile.locality_node)}}}});
    run.write_sidecar(args.out);
    std::cerr << "[exflow] holdout locality_gpu ratio "
              << safe_ratio(on_eval.locality_gpu, on_profile.locality_gpu) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inter-layer expert-affinity placement and communication toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic routing trace");
    gen_cmd->add_option("--experts", gen.experts)->required();
    gen_cmd->add_option("--layers", gen.layers)->required();
    gen_cmd->add_option("--tokens", gen.tokens)->required();
    gen_cmd->add_option("--alpha", gen.alpha, "Planted affinity strength in [0,1]")
        ->capture_default_str();
    gen_cmd->add_option("--groups", gen.groups, "Planted groups (must divide experts)")
        ->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
    gen_cmd->add_option("--out", gen.out)->required();

    AffinityArgs affinity;
    auto* affinity_cmd =
        app.add_subcommand("affinity", "Estimate inter-layer conditional routing probabilities");
    affinity_cmd->add_option("--trace", affinity.trace)->required();
    affinity_cmd->add_option("--gap", affinity.gap, "Layer gap")->capture_default_str();
    affinity_cmd->add_option("--out-dir", affinity.out_dir)->required();

    SolveArgs solve;
    auto* solve_cmd = app.add_subcommand("solve", "Solve a balanced expert placement");
    solve_cmd->add_option("--trace", solve.trace)->required();
    solve.topology.add_to(solve_cmd);
    solve.solver.add_to(solve_cmd);
    solve_cmd->add_option("--out", solve.out)->required();

    SimulateArgs simulate_args;
    auto* sim_cmd = app.add_subcommand("simulate", "Replay a trace under placements");
    sim_cmd->add_option("--trace", simulate_args.trace)->required();
    sim_cmd->add_option("--placement", simulate_args.placements,
                        "Placement JSON, repeatable, optionally name=path")
        ->required();
    sim_cmd->add_option("--mode", simulate_args.mode, "both, vanilla or coherent")
        ->check(CLI::IsMember({"both", "vanilla", "coherent"}))
        ->capture_default_str();
    sim_cmd->add_option("--tokens-per-gpu", simulate_args.tokens_per_gpu)->capture_default_str();
    sim_cmd->add_option("--iterations", simulate_args.iterations)->capture_default_str();
    sim_cmd->add_option("--homes", simulate_args.homes,
                        "Comma-separated per-token home GPUs (default round-robin)");
    sim_cmd->add_option("--intra-cost", simulate_args.intra_cost)->capture_default_str();
    sim_cmd->add_option("--inter-cost", simulate_args.inter_cost)->capture_default_str();
    sim_cmd->add_option("--nodes", simulate_args.nodes, "Cross-check the placement grid");
    sim_cmd->add_option("--gpus-per-node", simulate_args.gpus_per_node,
                        "Cross-check the placement grid");
    sim_cmd->add_option("--out", simulate_args.out)->required();

    SweepArgs sweep;
    auto* sweep_cmd = app.add_subcommand(
        "sweep", "Sample-size sweep: solve on subsamples, evaluate on the full trace");
    sweep_cmd->add_option("--trace", sweep.trace)->required();
    sweep_cmd->add_option("--samples", sweep.samples, "Comma-separated sample sizes")->required();
    sweep_cmd->add_option("--repeats", sweep.repeats)->capture_default_str();
    sweep_cmd->add_option("--seed", sweep.seed)->capture_default_str();
    sweep.topology.add_to(sweep_cmd);
    sweep.solver.add_to(sweep_cmd, /*with_seed=*/false); // per-repeat seeds derive from --seed
    sweep_cmd->add_option("--out", sweep.out)->required();

    HoldoutArgs holdout;
    auto* holdout_cmd =
        app.add_subcommand("holdout", "Profile a placement on one trace, evaluate on another");
    holdout_cmd->add_option("--profile-trace", holdout.profile_trace)->required();
    holdout_cmd->add_option("--eval-trace", holdout.eval_trace)->required();
    holdout.topology.add_to(holdout_cmd);
    holdout.solver.add_to(holdout_cmd);
    holdout_cmd->add_option("--out", holdout.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen_cmd->parsed()) {
            cmd_gen(gen);
        } else if (affinity_cmd->parsed()) {
            cmd_affinity(affinity);
        } else if (solve_cmd->parsed()) {
            cmd_solve(solve);
        } else if (sim_cmd->parsed()) {
            cmd_simulate(simulate_args);
        } else if (sweep_cmd->parsed()) {
            cmd_sweep(sweep);
        } else if (holdout_cmd->parsed()) {
            cmd_holdout(holdout);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
