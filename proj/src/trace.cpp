// SPDX-License-Identifier: Apache-2.0
#include "exflow/trace.hpp"

#include "exflow/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace exflow {

namespace {

bool is_blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        if (i > start) {
            out.push_back(line.substr(start, i - start));
        }
    }
    return out;
}

long parse_int(const std::string& token, int line_no) {
    long value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw ParseError("invalid token '" + token + "' at line " + std::to_string(line_no));
    }
    return value;
}

} // namespace

void RoutingTrace::validate() const {
    if (num_experts < 1) {
        throw std::invalid_argument("num_experts must be >= 1, got " + std::to_string(num_experts));
    }
    if (num_layers < 2) {
        throw std::invalid_argument("num_layers must be >= 2, got " + std::to_string(num_layers));
    }
    if (paths.rows() < 1) {
        throw std::invalid_argument("trace contains no token paths");
    }
    if (paths.cols() != num_layers) {
        throw std::invalid_argument("path length " + std::to_string(paths.cols()) +
                                    " != L=" + std::to_string(num_layers));
    }
    if ((paths.array() < 0).any() || (paths.array() >= num_experts).any()) {
        throw std::invalid_argument("expert id out of range [0," + std::to_string(num_experts) + ")");
    }
}

RoutingTrace parse_trace(std::istream& in) {
    std::string line;
    int line_no = 0;
    bool saw_magic = false;
    bool saw_dims = false;
    RoutingTrace trace;
    std::vector<std::int32_t> flat;
    long token_count = 0;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (is_blank(line) || line[0] == '#') {
            continue;
        }
        if (!saw_magic) {
            if (line != "EXFLOW-TRACE v1") {
                throw ParseError("missing or unsupported EXFLOW-TRACE header at line " +
                                 std::to_string(line_no));
            }
            saw_magic = true;
            continue;
        }
        if (!saw_dims) {
            const auto fields = split_ws(line);
            if (fields.size() != 4 || fields[0] != "E" || fields[2] != "L") {
                throw ParseError("expected 'E <experts> L <layers>' at line " + std::to_string(line_no));
            }
            const long experts = parse_int(fields[1], line_no);
            const long layers = parse_int(fields[3], line_no);
            if (experts < 1) {
                throw ParseError("E must be >= 1, got " + std::to_string(experts) + " at line " +
                                 std::to_string(line_no));
            }
            if (layers < 2) {
                throw ParseError("L must be >= 2, got " + std::to_string(layers) + " at line " +
                                 std::to_string(line_no));
            }
            trace.num_experts = static_cast<int>(experts);
            trace.num_layers = static_cast<int>(layers);
            saw_dims = true;
            continue;
        }
        const auto fields = split_ws(line);
        if (static_cast<int>(fields.size()) != trace.num_layers) {
            throw ParseError("path length " + std::to_string(fields.size()) +
                             " != L=" + std::to_string(trace.num_layers) + " at line " +
                             std::to_string(line_no));
        }
        for (const auto& field : fields) {
            const long id = parse_int(field, line_no);
            if (id < 0 || id >= trace.num_experts) {
                throw ParseError("expert id " + std::to_string(id) + " out of range [0," +
                                 std::to_string(trace.num_experts) + ") at line " +
                                 std::to_string(line_no));
            }
            flat.push_back(static_cast<std::int32_t>(id));
        }
        ++token_count;
    }

    if (!saw_magic) {
        throw ParseError("missing or unsupported EXFLOW-TRACE header at line 1");
    }
    if (!saw_dims) {
        throw ParseError("missing 'E <experts> L <layers>' line");
    }
    if (token_count == 0) {
        throw ParseError("trace contains no token paths");
    }

    trace.paths = Eigen::Map<const PathMatrix>(flat.data(), token_count, trace.num_layers);
    return trace;
}

RoutingTrace parse_trace(const std::string& text) {
    std::istringstream in(text);
    return parse_trace(in);
}

RoutingTrace load_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open trace file: " + path.string());
    }
    return parse_trace(in);
}

void write_trace(std::ostream& out, const RoutingTrace& trace) {
    trace.validate();
    out << "EXFLOW-TRACE v1\n";
    out << "E " << trace.num_experts << " L " << trace.num_layers << "\n";
    for (Eigen::Index t = 0; t < trace.paths.rows(); ++t) {
        for (Eigen::Index j = 0; j < trace.paths.cols(); ++j) {
            if (j > 0) {
                out << ' ';
            }
            out << trace.paths(t, j);
        }
        out << '\n';
    }
}

std::string serialize_trace(const RoutingTrace& trace) {
    std::ostringstream out;
    write_trace(out, trace);
    return out.str();
}

void save_trace(const std::filesystem::path& path, const RoutingTrace& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write trace file: " + path.string());
    }
    write_trace(out, trace);
}

TransitionCounts count_transitions(const RoutingTrace& trace, int gap) {
    trace.validate();
    if (gap < 1 || gap > trace.num_layers - 1) {
        throw std::invalid_argument("gap " + std::to_string(gap) + " out of range [1," +
                                    std::to_string(trace.num_layers - 1) + "]");
    }

    TransitionCounts counts;
    counts.num_experts = trace.num_experts;
    counts.num_layers = trace.num_layers;
    counts.gap = gap;

    const int pairs = trace.num_layers - gap;
    counts.matrices.assign(pairs, CountMatrix::Zero(trace.num_experts, trace.num_experts));
    for (Eigen::Index t = 0; t < trace.paths.rows(); ++t) {
        for (int j = 0; j < pairs; ++j) {
            counts.matrices[j](trace.paths(t, j), trace.paths(t, j + gap)) += 1;
        }
    }
    counts.row_totals.reserve(pairs);
    for (const auto& m : counts.matrices) {
        counts.row_totals.push_back(m.rowwise().sum());
    }
    return counts;
}

AffinityMatrix conditional_probabilities(const TransitionCounts& counts) {
    AffinityMatrix affinity;
    affinity.num_experts = counts.num_experts;
    affinity.num_layers = counts.num_layers;
    affinity.gap = counts.gap;
    affinity.matrices.reserve(counts.matrices.size());
    affinity.seen.reserve(counts.matrices.size());

    for (std::size_t j = 0; j < counts.matrices.size(); ++j) {
        const CountMatrix& m = counts.matrices[j];
        const CountVector& totals = counts.row_totals[j];
        ProbMatrix probs = ProbMatrix::Zero(m.rows(), m.cols());
        SeenMask seen = SeenMask::Constant(m.rows(), false);
        for (Eigen::Index a = 0; a < m.rows(); ++a) {
            if (totals(a) > 0) {
                probs.row(a) = m.row(a).cast<double>() / static_cast<double>(totals(a));
                seen(a) = true;
            }
        }
        affinity.matrices.push_back(std::move(probs));
        affinity.seen.push_back(std::move(seen));
    }
    return affinity;
}

int most_affiliated(const AffinityMatrix& affinity, int source_layer, int expert) {
    if (source_layer < 0 || source_layer >= affinity.num_layer_pairs()) {
        throw std::invalid_argument("source layer " + std::to_string(source_layer) +
                                    " out of range [0," + std::to_string(affinity.num_layer_pairs()) +
                                    ")");
    }
    if (expert < 0 || expert >= affinity.num_experts) {
        throw std::invalid_argument("expert " + std::to_string(expert) + " out of range");
    }
    if (!affinity.seen[source_layer](expert)) {
        throw std::invalid_argument("no observations for expert " + std::to_string(expert) +
                                    " at layer " + std::to_string(source_layer));
    }
    // Eigen's max visitor keeps the first maximum, which is the required
    // lowest-index tie-break.
    Eigen::Index best = 0;
    affinity.matrices[source_layer].row(expert).maxCoeff(&best);
    return static_cast<int>(best);
}

std::string export_heatmap_csv(const AffinityMatrix& affinity, int source_layer) {
    if (source_layer < 0 || source_layer >= affinity.num_layer_pairs()) {
        throw std::invalid_argument("source layer " + std::to_string(source_layer) +
                                    " out of range [0," + std::to_string(affinity.num_layer_pairs()) +
                                    ")");
    }
    const ProbMatrix& m = affinity.matrices[source_layer];
    std::string out;
    out.reserve(static_cast<std::size_t>(m.size()) * 10);
    char buf[32];
    for (Eigen::Index a = 0; a < m.rows(); ++a) {
        for (Eigen::Index b = 0; b < m.cols(); ++b) {
            std::snprintf(buf, sizeof(buf), "%.6f", m(a, b));
            if (b > 0) {
                out += ',';
            }
            out += buf;
        }
        out += '\n';
    }
    return out;
}

RoutingTrace permute_experts(const RoutingTrace& trace, std::span<const int> perm) {
    trace.validate();
    if (static_cast<int>(perm.size()) != trace.num_experts) {
        throw std::invalid_argument("permutation size != num_experts");
    }
    std::vector<bool> hit(trace.num_experts, false);
    for (const int p : perm) {
        if (p < 0 || p >= trace.num_experts || hit[p]) {
            throw std::invalid_argument("not a permutation of [0,E)");
        }
        hit[p] = true;
    }
    RoutingTrace out = trace;
    for (Eigen::Index t = 0; t < out.paths.rows(); ++t) {
        for (Eigen::Index j = 0; j < out.paths.cols(); ++j) {
            out.paths(t, j) = static_cast<std::int32_t>(perm[trace.paths(t, j)]);
        }
    }
    return out;
}

RoutingTrace subsample_tokens(const RoutingTrace& trace, int count, std::uint64_t seed) {
    trace.validate();
    if (count < 1 || count > trace.num_tokens()) {
        throw std::invalid_argument("sample size " + std::to_string(count) + " out of range [1," +
                                    std::to_string(trace.num_tokens()) + "]");
    }
    Rng rng(seed);
    std::vector<int> picked = sample_without_replacement(trace.num_tokens(), count, rng);
    std::sort(picked.begin(), picked.end());

    RoutingTrace out;
    out.num_experts = trace.num_experts;
    out.num_layers = trace.num_layers;
    out.paths.resize(count, trace.num_layers);
    for (int i = 0; i < count; ++i) {
        out.paths.row(i) = trace.paths.row(picked[i]);
    }
    return out;
}

} // namespace exflow
