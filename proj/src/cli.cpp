#include "netsketch/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "netsketch/assoc_conv.hpp"
#include "netsketch/model_io.hpp"
#include "netsketch/parallel.hpp"
#include "netsketch/rng.hpp"
#include "netsketch/sketch.hpp"

namespace netsketch::cli {

namespace {

using nlohmann::json;

constexpr const char* kConventions =
    "FADD/FMUL counting conventions: a direct binary convolution costs t FADDs "
    "per output and no FMULs; a derived convolution costs (t-|r|)/2+1 FADDs and "
    "one doubling, r being the parent/child inner product; every ternary "
    "evaluation scans t positions (ternary_selects); composing one output value "
    "from m terms costs m FMULs and m-1 FADDs. Doublings and ternary selects "
    "are tallied separately because they are far cheaper than FADDs/FMULs.";

struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// -------------------------------------------------------------------
// input loading: file containers plus synthetic descriptors of the form
//   synth:<gaussian|uniform>:<c>x<w>x<h>:n=<count>[:seed=<seed>]

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream stream(s);
    std::string item;
    while (std::getline(stream, item, sep)) parts.push_back(item);
    return parts;
}

std::uint64_t parse_number(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const std::uint64_t value = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return value;
    } catch (const std::exception&) {
        throw usage_error("cannot parse " + what + " from '" + s + "'");
    }
}

std::vector<LayerWeights> load_input(const std::string& input,
                                     std::uint64_t default_seed) {
    if (input.rfind("synth:", 0) != 0) {
        return load_weights(input);
    }
    const auto parts = split(input, ':');
    if (parts.size() < 4 || parts.size() > 5) {
        throw usage_error("synthetic input must look like "
                          "synth:gaussian:CxWxH:n=COUNT[:seed=SEED]");
    }
    Distribution dist;
    if (parts[1] == "gaussian") {
        dist = Distribution::gaussian;
    } else if (parts[1] == "uniform") {
        dist = Distribution::uniform;
    } else {
        throw usage_error("unknown distribution '" + parts[1] + "'");
    }
    const auto dims = split(parts[2], 'x');
    if (dims.size() != 3) throw usage_error("shape must be CxWxH");
    Shape shape{std::uint32_t(parse_number(dims[0], "channels")),
                std::uint32_t(parse_number(dims[1], "width")),
                std::uint32_t(parse_number(dims[2], "height"))};
    if (parts[3].rfind("n=", 0) != 0) throw usage_error("expected n=COUNT");
    const auto n = std::uint32_t(parse_number(parts[3].substr(2), "filter count"));
    std::uint64_t seed = default_seed;
    if (parts.size() == 5) {
        if (parts[4].rfind("seed=", 0) != 0) throw usage_error("expected seed=SEED");
        seed = parse_number(parts[4].substr(5), "seed");
    }
    if (n < 1 || shape.volume() < 1) {
        throw usage_error("synthetic input needs n >= 1 and a nonempty shape");
    }

    LayerWeights layer;
    layer.spec.name = parts[1] + "-" + parts[2] + "-n" + std::to_string(n);
    layer.spec.n = n;
    layer.spec.shape = shape;
    layer.spec.spatial_s = 1;
    layer.filters = generate_synthetic(shape, n, dist, seed);
    return {std::move(layer)};
}

bool is_sketch_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    char magic[5] = {};
    in.read(magic, 5);
    return in.gcount() == 5 &&
           std::string_view(magic, 5) == std::string_view("NSKT\0", 5);
}

std::vector<Sketch> sketch_layer(const LayerWeights& layer, SketchMethod method,
                                 std::uint32_t bits) {
    std::vector<Sketch> sketches(layer.filters.size());
    parallel_for(layer.filters.size(), [&](std::size_t i) {
        sketches[i] = method == SketchMethod::refined
                          ? refined_sketch(layer.filters[i], bits)
                          : direct_sketch(layer.filters[i], bits);
    });
    return sketches;
}

// Layer-level energy: 1 - sum of residuals / sum of norms, per step.
// Filters whose sketches stopped early contribute their final residual.
std::vector<double> layer_energy(const std::vector<Sketch>& sketches,
                                 std::uint32_t bits) {
    double norm_sum = 0.0;
    for (const Sketch& s : sketches) norm_sum += s.residual_norms_sq.front();
    std::vector<double> curve(bits + 1, 1.0);
    if (norm_sum == 0.0) return curve;
    for (std::uint32_t j = 0; j <= bits; ++j) {
        double residual_sum = 0.0;
        for (const Sketch& s : sketches) {
            const std::size_t step = std::min<std::size_t>(j, s.terms());
            residual_sum += s.residual_norms_sq[step];
        }
        curve[j] = 1.0 - residual_sum / norm_sum;
    }
    return curve;
}

std::string format_double(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

// -------------------------------------------------------------------
// sketch

struct SketchOptions {
    std::string input;
    std::string output;
    std::uint32_t bits = 3;
    std::string method = "refined";
    std::uint64_t seed = kDefaultSeed;
};

int cmd_sketch(const SketchOptions& opt, std::ostream& out) {
    const auto layers = load_input(opt.input, opt.seed);
    const SketchMethod method = opt.method == "direct" ? SketchMethod::direct
                                                       : SketchMethod::refined;
    std::vector<LayerSketches> sketched;
    for (const LayerWeights& layer : layers) {
        LayerSketches ls;
        ls.spec = layer.spec;
        ls.declared_m = opt.bits;
        ls.sketches = sketch_layer(layer, method, opt.bits);
        const auto energy = layer_energy(ls.sketches, opt.bits);
        const auto acct = storage_and_flops(layer.spec.shape, layer.spec.n,
                                            opt.bits, layer.spec.spatial_s);
        out << "layer " << layer.spec.name << ": n=" << layer.spec.n
            << " t=" << layer.spec.t() << " m=" << opt.bits
            << " method=" << opt.method
            << " energy=" << format_double(energy.back())
            << " compression=" << format_double(acct.compression_factor) << "x\n";
        sketched.push_back(std::move(ls));
    }
    const StorageBreakdown storage = save_sketch(opt.output, sketched);
    out << "wrote " << opt.output << ": " << storage.total_bits() / 8
        << " bytes (pool " << storage.pool_bits << " bits, indices "
        << storage.index_bits << ", scales " << storage.scale_bits
        << ", metadata " << storage.metadata_bits << ")\n";
    return exit_ok;
}

// -------------------------------------------------------------------
// verify

class CheckLog {
public:
    CheckLog(std::ostream& out) : out_(out) {}

    void record(const std::string& property, const std::string& scope, bool ok,
                const std::string& detail = "") {
        out_ << (ok ? "[PASS] " : "[FAIL] ") << property << "  (" << scope << ")";
        if (!ok && !detail.empty()) out_ << ": " << detail;
        out_ << "\n";
        all_ok_ = all_ok_ && ok;
    }

    [[nodiscard]] bool all_ok() const { return all_ok_; }

private:
    std::ostream& out_;
    bool all_ok_ = true;
};

bool close_rel(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Exhaustive one-term minimum of the approximation error over all 2^t
// sign tensors with their optimal scales. Only sensible for small t.
double brute_force_one_term_error(const RealTensor& w) {
    const std::size_t t = w.size();
    const double norm_sq = frobenius_norm_sq(w);
    double best = norm_sq;
    for (std::uint64_t mask = 0; mask < (std::uint64_t(1) << t); ++mask) {
        double dot = 0.0;
        for (std::size_t i = 0; i < t; ++i) {
            dot += (mask >> i) & 1 ? w[i] : -w[i];
        }
        best = std::min(best, norm_sq - dot * dot / double(t));
    }
    return best;
}

int verify_sketch_file(const std::string& path, std::ostream& out,
                       std::ostream& err) {
    CheckLog log(out);
    std::vector<LayerSketches> layers;
    try {
        layers = load_sketch(path);
        log.record("file-integrity", path, true);
    } catch (const checksum_error& e) {
        log.record("file-integrity", path, false, e.what());
        return exit_verify;
    } catch (const io_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_io;
    }
    for (const LayerSketches& layer : layers) {
        bool monotone = true;
        bool lengths = true;
        for (const Sketch& s : layer.sketches) {
            lengths = lengths && s.scales.size() == s.terms() &&
                      s.residual_norms_sq.size() == s.terms() + 1;
            for (std::size_t j = 0; j + 1 < s.residual_norms_sq.size(); ++j) {
                monotone = monotone &&
                           s.residual_norms_sq[j + 1] <=
                               s.residual_norms_sq[j] * (1.0 + 1e-9);
            }
        }
        log.record("sketch-structure", layer.spec.name, lengths);
        log.record("residual-monotone", layer.spec.name, monotone);
    }
    return log.all_ok() ? exit_ok : exit_verify;
}

struct VerifyOptions {
    std::string input;
    std::uint32_t bits = 3;
    std::uint64_t seed = kDefaultSeed;
};

// Exhaustive spanning-tree minimum by walking every Pruefer sequence.
// Only called for tiny vertex counts.
std::uint64_t exhaustive_mst_weight(const std::vector<BinaryTensor>& tensors) {
    const std::size_t n = tensors.size();
    std::vector<std::vector<std::int64_t>> dist(n, std::vector<std::int64_t>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            dist[i][j] = distance(tensors[i], tensors[j]);
        }
    }
    if (n <= 1) return 0;
    if (n == 2) return std::uint64_t(dist[0][1]);
    std::vector<std::uint32_t> seq(n - 2, 0);
    std::uint64_t best = std::uint64_t(-1);
    while (true) {
        std::vector<std::uint32_t> degree(n, 1);
        for (std::uint32_t x : seq) ++degree[x];
        std::set<std::uint32_t> leaves;
        for (std::uint32_t v = 0; v < n; ++v) {
            if (degree[v] == 1) leaves.insert(v);
        }
        std::uint64_t weight = 0;
        for (std::uint32_t x : seq) {
            const std::uint32_t leaf = *leaves.begin();
            leaves.erase(leaves.begin());
            weight += std::uint64_t(dist[leaf][x]);
            if (--degree[x] == 1) leaves.insert(x);
        }
        const std::uint32_t u = *leaves.begin();
        const std::uint32_t v = *std::next(leaves.begin());
        best = std::min(best, weight + std::uint64_t(dist[u][v]));

        std::size_t pos = 0;
        while (pos < seq.size() && ++seq[pos] == n) {
            seq[pos] = 0;
            ++pos;
        }
        if (pos == seq.size()) break;
    }
    return best;
}

int cmd_verify(const VerifyOptions& opt, std::ostream& out, std::ostream& err) {
    if (opt.input.rfind("synth:", 0) != 0 && is_sketch_file(opt.input)) {
        return verify_sketch_file(opt.input, out, err);
    }

    const auto layers = load_input(opt.input, opt.seed);
    CheckLog log(out);
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const LayerWeights& layer = layers[li];
        const std::size_t t = layer.spec.t();
        const double sqrt_t = std::sqrt(double(t));

        bool direct_bound_ok = true, refined_contraction_ok = true, orthogonal = true;
        bool monotone = true, energy_ok = true, one_term = true;
        std::vector<Sketch> refined(layer.filters.size());

        for (std::size_t f = 0; f < layer.filters.size(); ++f) {
            const RealTensor& w = layer.filters[f];
            const double norm = std::sqrt(frobenius_norm_sq(w));

            const Sketch direct = direct_sketch(w, opt.bits);
            for (std::size_t j = 0; j < direct.terms(); ++j) {
                const double bound =
                    direct_error_bound(direct.residual_norms_sq.front(), t, j + 1);
                direct_bound_ok = direct_bound_ok && direct.residual_norms_sq[j + 1] <=
                                           bound * (1.0 + 1e-9);
            }

            refined[f] = refined_sketch(w, opt.bits);
            const BoundReport report = bound_report(w, refined[f]);
            for (std::size_t j = 0; j < report.per_step_bound.size(); ++j) {
                refined_contraction_ok = refined_contraction_ok &&
                           report.per_step_actual[j] <=
                               report.per_step_bound[j] * (1.0 + 1e-9) + 1e-300;
            }

            const RealTensor residual_vec = [&] {
                RealTensor r = w;
                const RealTensor rec = reconstruct(refined[f]);
                for (std::size_t i = 0; i < r.size(); ++i) r[i] -= rec[i];
                return r;
            }();
            for (const BinaryTensor& b : refined[f].basis) {
                orthogonal = orthogonal && std::abs(inner_product(residual_vec, b)) <=
                                               1e-6 * norm * sqrt_t;
            }

            for (const Sketch* s :
                 std::initializer_list<const Sketch*>{&direct, &refined[f]}) {
                for (std::size_t j = 0; j + 1 < s->residual_norms_sq.size(); ++j) {
                    const double before = s->residual_norms_sq[j];
                    const double after = s->residual_norms_sq[j + 1];
                    monotone = monotone &&
                               (before == 0.0 ? after == 0.0
                                              : after < before * (1.0 + 1e-12));
                }
                const auto curve = energy_curve(w, *s);
                for (std::size_t j = 0; j + 1 < curve.size(); ++j) {
                    energy_ok = energy_ok && curve[j + 1] >= curve[j] - 1e-12;
                }
            }

            if (t <= 12) {
                const double best = brute_force_one_term_error(w);
                one_term = one_term &&
                           close_rel(direct.residual_norms_sq[1], best, 1e-9);
            }
        }

        log.record("direct-error-bound", layer.spec.name, direct_bound_ok);
        log.record("refined-step-contraction", layer.spec.name, refined_contraction_ok);
        log.record("ls-orthogonality", layer.spec.name, orthogonal);
        log.record("residual-monotone", layer.spec.name, monotone);
        log.record("energy-nondecreasing", layer.spec.name, energy_ok);
        if (t <= 12) log.record("one-term-optimality", layer.spec.name, one_term);

        // direct vs associative agreement on a small synthetic map
        const Shape kernel = layer.spec.shape;
        FeatureMap fm(kernel.c, kernel.w + 2, kernel.h + 2);
        std::mt19937_64 gen(opt.seed + li);
        for (double& v : fm.data) v = gaussian(gen);

        OpCounter c_none, c_mst, c_random;
        const auto out_none = sketch_layer_convolve(fm, refined, TreeMode::none, 1,
                                                    c_none, opt.seed);
        const auto out_mst =
            sketch_layer_convolve(fm, refined, TreeMode::mst, 1, c_mst, opt.seed);
        const auto out_random = sketch_layer_convolve(fm, refined, TreeMode::random,
                                                      1, c_random, opt.seed);
        bool equal = true;
        for (std::size_t f = 0; f < out_none.size(); ++f) {
            for (std::size_t i = 0; i < out_none[f].data.size(); ++i) {
                equal = equal &&
                        close_rel(out_none[f].data[i], out_mst[f].data[i], 1e-9) &&
                        close_rel(out_none[f].data[i], out_random[f].data[i], 1e-9);
            }
        }
        log.record("assoc-equals-direct", layer.spec.name, equal);
        log.record("fmul-invariance", layer.spec.name,
                   c_none.fmuls == c_mst.fmuls && c_none.fmuls == c_random.fmuls);

        // tree-cost invariants on the pooled binary tensors
        std::vector<BinaryTensor> tensors;
        for (const Sketch& s : refined) {
            tensors.insert(tensors.end(), s.basis.begin(), s.basis.end());
        }
        if (!tensors.empty()) {
            const DependencyTree mst = build_mst(tensors);
            const DependencyTree random_tree = build_random_tree(tensors, opt.seed);
            const RealTensor x = extract_window(fm, kernel, 0, 0);
            OpCounter via_mst, via_random;
            (void)associative_convolve_all(x, tensors, mst, via_mst);
            (void)associative_convolve_all(x, tensors, random_tree, via_random);
            const std::uint64_t expected =
                t + (tensors.size() - 1) + mst.total_weight();
            log.record("fadd-count-law", layer.spec.name, via_mst.fadds == expected);
            log.record("mst-cost-minimal", layer.spec.name,
                       via_mst.fadds <= via_random.fadds);
            if (tensors.size() <= 7) {
                log.record("mst-exhaustive-minimum", layer.spec.name,
                           mst.total_weight() == exhaustive_mst_weight(tensors));
            }
            bool metric_ok = true;
            std::mt19937_64 triple_gen(opt.seed + 17 * li);
            for (int trial = 0; trial < 20; ++trial) {
                const auto& a = tensors[uniform_below(triple_gen, tensors.size())];
                const auto& b = tensors[uniform_below(triple_gen, tensors.size())];
                const auto& d = tensors[uniform_below(triple_gen, tensors.size())];
                metric_ok = metric_ok && distance(a, b) == distance(b, a) &&
                            distance(a, a) == 0 &&
                            distance(a, d) <= distance(a, b) + distance(b, d);
            }
            log.record("distance-pseudometric", layer.spec.name, metric_ok);
        }
    }

    // statistical dominance of the refit, on a fixed builtin sample
    {
        const auto sample =
            generate_synthetic(Shape{3, 3, 3}, 100, Distribution::gaussian, 909);
        int wins = 0;
        double refined_mean = 0.0, direct_mean = 0.0;
        for (const RealTensor& w : sample) {
            const double rd = refined_sketch(w, 3).residual_norms_sq.back();
            const double dd = direct_sketch(w, 3).residual_norms_sq.back();
            if (rd <= dd * (1 + 1e-12)) ++wins;
            refined_mean += rd;
            direct_mean += dd;
        }
        log.record("refined-dominates-direct", "builtin 100-tensor sample",
                   wins >= 95 && refined_mean <= direct_mean);
    }
    return log.all_ok() ? exit_ok : exit_verify;
}

// -------------------------------------------------------------------
// bench

struct BenchOptions {
    std::string input;
    std::uint32_t bits = 3;
    std::string method = "refined";
    std::string tree = "all";
    std::uint64_t seed = kDefaultSeed;
    std::string report_path;
    std::string format = "json";
    std::uint32_t fm_height = 0;  // 0 -> kernel height + 3
    std::uint32_t fm_width = 0;
    std::uint32_t stride = 1;
};

json counter_json(const OpCounter& c) {
    return json{{"fadds", c.fadds},
                {"fmuls", c.fmuls},
                {"ternary_selects", c.ternary_selects},
                {"doublings", c.doublings}};
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char ch : s) {
        if (ch == '"') quoted += '"';
        quoted += ch;
    }
    return quoted + "\"";
}

void report_to_csv(const json& report, std::ostream& out) {
    out << "# " << report.at("format").get<std::string>() << "\n";
    out << "# " << report.at("conventions").get<std::string>() << "\n";
    out << "layer,section,metric,key,value\n";
    for (const json& layer : report.at("layers")) {
        const std::string name = csv_field(layer.at("name"));
        auto row = [&](const std::string& section, const std::string& metric,
                       const std::string& key, const json& value) {
            out << name << ',' << section << ',' << metric << ',' << key << ','
                << value.dump() << "\n";
        };
        for (const auto& key : {"n", "t", "m", "spatial_positions"}) {
            row("meta", key, "", layer.at(key));
        }
        for (std::size_t j = 0; j < layer.at("energy").size(); ++j) {
            row("energy", "energy", std::to_string(j), layer.at("energy")[j]);
        }
        for (std::size_t j = 0; j < layer.at("residual_norm_sq_sum").size(); ++j) {
            row("residual", "residual_norm_sq_sum", std::to_string(j),
                layer.at("residual_norm_sq_sum")[j]);
        }
        for (std::size_t j = 0; j < layer.at("bound_sum").size(); ++j) {
            row("bound", "bound_sum", std::to_string(j), layer.at("bound_sum")[j]);
        }
        for (const auto& [key, value] : layer.at("storage").items()) {
            row("storage", key, "", value);
        }
        for (const auto& [mode, counts] : layer.at("modes").items()) {
            for (const auto& [stage, counter] : counts.items()) {
                for (const auto& [metric, value] : counter.items()) {
                    row("counts", metric, mode + "." + stage, value);
                }
            }
        }
        if (layer.contains("fadd_reduction")) {
            for (const auto& [key, value] : layer.at("fadd_reduction").items()) {
                row("reduction", key, "", value);
            }
        }
    }
}

int cmd_bench(const BenchOptions& opt, std::ostream& out) {
    const auto layers = load_input(opt.input, opt.seed);
    const SketchMethod method = opt.method == "direct" ? SketchMethod::direct
                                                       : SketchMethod::refined;
    std::vector<std::string> modes;
    if (opt.tree == "all") {
        modes = {"none", "random", "mst"};
    } else if (opt.tree == "none" || opt.tree == "random" || opt.tree == "mst") {
        modes = {opt.tree};
    } else {
        throw usage_error("--tree must be one of all|mst|random|none");
    }

    json report;
    report["format"] = "netsketch-report-v1";
    report["command"] = "bench";
    report["conventions"] = kConventions;
    report["method"] = opt.method;
    report["bits"] = opt.bits;
    report["seed"] = opt.seed;
    report["tree_modes"] = modes;
    report["layers"] = json::array();

    for (std::size_t li = 0; li < layers.size(); ++li) {
        const LayerWeights& layer = layers[li];
        const auto start = std::chrono::steady_clock::now();
        const Shape kernel = layer.spec.shape;
        const std::size_t t = layer.spec.t();

        const std::vector<Sketch> sketches = sketch_layer(layer, method, opt.bits);

        // pooled tensors, for the binary-convolution stage counters
        std::vector<BinaryTensor> tensors;
        for (const Sketch& s : sketches) {
            tensors.insert(tensors.end(), s.basis.begin(), s.basis.end());
        }

        const std::uint32_t fm_h =
            opt.fm_height > 0 ? opt.fm_height : kernel.h + 3;
        const std::uint32_t fm_w = opt.fm_width > 0 ? opt.fm_width : kernel.w + 3;
        if (fm_h < kernel.h || fm_w < kernel.w) {
            throw usage_error("feature map smaller than the kernel");
        }
        FeatureMap fm(kernel.c, fm_w, fm_h);
        std::mt19937_64 gen(opt.seed + li);
        for (double& v : fm.data) v = gaussian(gen);

        const std::uint32_t out_h = (fm_h - kernel.h) / opt.stride + 1;
        const std::uint32_t out_w = (fm_w - kernel.w) / opt.stride + 1;
        const std::uint64_t positions = std::uint64_t(out_h) * out_w;

        json modes_json = json::object();
        std::map<std::string, OpCounter> binary_counters;
        for (const std::string& mode_name : modes) {
            const TreeMode mode = mode_name == "mst"      ? TreeMode::mst
                                  : mode_name == "random" ? TreeMode::random
                                                          : TreeMode::none;
            OpCounter binary;
            if (!tensors.empty()) {
                DependencyTree tree;
                if (mode != TreeMode::none) {
                    tree = mode == TreeMode::mst
                               ? build_mst(tensors)
                               : build_random_tree(tensors, opt.seed);
                }
                for (std::uint32_t r = 0; r < out_h; ++r) {
                    for (std::uint32_t c = 0; c < out_w; ++c) {
                        const RealTensor x = extract_window(
                            fm, kernel, r * opt.stride, c * opt.stride);
                        if (mode == TreeMode::none) {
                            (void)direct_convolve_all(x, tensors, binary);
                        } else {
                            (void)associative_convolve_all(x, tensors, tree, binary);
                        }
                    }
                }
            }
            OpCounter full;
            (void)sketch_layer_convolve(fm, sketches, mode, opt.stride, full,
                                        opt.seed);
            binary_counters[mode_name] = binary;
            modes_json[mode_name] = {{"binary_conv", counter_json(binary)},
                                     {"total", counter_json(full)}};
        }

        json layer_json;
        layer_json["name"] = layer.spec.name;
        layer_json["n"] = layer.spec.n;
        layer_json["shape"] = {{"c", kernel.c}, {"w", kernel.w}, {"h", kernel.h}};
        layer_json["t"] = t;
        layer_json["m"] = opt.bits;
        layer_json["spatial_positions"] = positions;
        layer_json["energy"] = layer_energy(sketches, opt.bits);

        std::vector<double> residual_sum(opt.bits + 1, 0.0);
        std::vector<double> bound_sum(opt.bits + 1, 0.0);
        for (const Sketch& s : sketches) {
            for (std::uint32_t j = 0; j <= opt.bits; ++j) {
                const std::size_t step = std::min<std::size_t>(j, s.terms());
                residual_sum[j] += s.residual_norms_sq[step];
            }
        }
        for (std::size_t f = 0; f < sketches.size(); ++f) {
            const BoundReport br = bound_report(layer.filters[f], sketches[f]);
            bound_sum[0] += sketches[f].residual_norms_sq.front();
            for (std::uint32_t j = 1; j <= opt.bits; ++j) {
                const std::size_t step =
                    std::min<std::size_t>(j, br.per_step_bound.size());
                bound_sum[j] += step == 0 ? sketches[f].residual_norms_sq.front()
                                          : br.per_step_bound[step - 1];
            }
        }
        layer_json["residual_norm_sq_sum"] = residual_sum;
        layer_json["bound_sum"] = bound_sum;

        const auto acct =
            storage_and_flops(kernel, layer.spec.n, opt.bits, positions);
        layer_json["storage"] = {
            {"full_precision_bits", acct.full_precision_bits},
            {"sketched_bits", acct.sketched_bits},
            {"compression_factor", acct.compression_factor},
            {"full_precision_fmuls", acct.full_precision_fmuls},
            {"sketched_fmuls", acct.sketched_fmuls},
            {"fmul_factor", acct.fmul_factor}};
        layer_json["modes"] = modes_json;

        json reduction = json::object();
        if (binary_counters.count("none")) {
            const double direct_fadds = double(binary_counters["none"].fadds);
            for (const auto& [mode_name, counter] : binary_counters) {
                if (mode_name == "none" || counter.fadds == 0) continue;
                reduction[mode_name + "_vs_direct"] =
                    direct_fadds / double(counter.fadds);
            }
        }
        if (!reduction.empty()) layer_json["fadd_reduction"] = reduction;

        report["layers"].push_back(std::move(layer_json));

        const double wall_ms =
            std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - start)
                .count();
        out << "layer " << layer.spec.name << ": positions=" << positions;
        for (const std::string& mode_name : modes) {
            out << " fadds[" << mode_name
                << "]=" << binary_counters[mode_name].fadds;
        }
        if (!reduction.empty()) {
            for (const auto& [key, value] : reduction.items()) {
                out << " " << key << "=" << format_double(value.get<double>())
                    << "x";
            }
        }
        out << " wall=" << format_double(wall_ms) << "ms\n";
    }

    if (!opt.report_path.empty()) {
        std::ofstream file(opt.report_path, std::ios::binary | std::ios::trunc);
        if (!file) throw io_error("cannot open " + opt.report_path + " for writing");
        if (opt.format == "csv") {
            report_to_csv(report, file);
        } else {
            file << report.dump(2) << "\n";
        }
        if (!file) throw io_error("write failure on " + opt.report_path);
        out << "wrote report " << opt.report_path << "\n";
    }
    return exit_ok;
}

// -------------------------------------------------------------------
// info

int cmd_info(const std::string& path, std::ostream& out) {
    const SketchFileInfo info = inspect_sketch(path);
    std::ostringstream buffer;
    buffer << "sketch file " << path << " (version " << info.version << ", "
           << info.layers.size() << " layer" << (info.layers.size() == 1 ? "" : "s")
           << ")\n";
    for (const SketchLayerInfo& layer : info.layers) {
        const std::size_t t = layer.spec.t();
        const double dedup = layer.pool_size > 0
                                 ? double(layer.total_terms) / layer.pool_size
                                 : 0.0;
        const auto acct = storage_and_flops(layer.spec.shape, layer.spec.n,
                                            std::max<std::uint32_t>(1, layer.declared_m),
                                            layer.spec.spatial_s);
        buffer << "layer " << layer.spec.name << ": n=" << layer.spec.n << " shape="
               << layer.spec.shape.c << "x" << layer.spec.shape.w << "x"
               << layer.spec.shape.h << " t=" << t << " m=" << layer.declared_m
               << " method="
               << (layer.method == SketchMethod::refined ? "refined" : "direct")
               << "\n";
        buffer << "  pool=" << layer.pool_size << " patterns for "
               << layer.total_terms << " terms (dedup " << format_double(dedup)
               << "x), index width " << layer.index_bit_width << " bits\n";
        buffer << "  storage bits: pool " << layer.storage.pool_bits << ", indices "
               << layer.storage.index_bits << ", scales " << layer.storage.scale_bits
               << ", metadata " << layer.storage.metadata_bits << "\n";
        buffer << "  compression " << format_double(acct.compression_factor)
               << "x, fmul factor " << format_double(acct.fmul_factor) << "x\n";
    }
    buffer << "total bits " << info.storage.total_bits() << " (pool "
           << info.storage.pool_bits << ", indices " << info.storage.index_bits
           << ", scales " << info.storage.scale_bits << ", metadata "
           << info.storage.metadata_bits << ")\n";
    out << buffer.str();
    return exit_ok;
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"scaled binary expansion of filter banks, associative binary "
                 "convolution, and exact operation accounting"};
    app.require_subcommand(1);

    SketchOptions sketch_opt;
    CLI::App* sketch_cmd =
        app.add_subcommand("sketch", "approximate weights and write an NSKT file");
    sketch_cmd->add_option("input", sketch_opt.input,
                           "NSKW/npy file or synth:DIST:CxWxH:n=N descriptor")
        ->required();
    sketch_cmd->add_option("-m,--bits", sketch_opt.bits, "terms per filter")
        ->required()
        ->check(CLI::Range(1u, 1u << 20));
    sketch_cmd->add_option("--method", sketch_opt.method, "direct or refined")
        ->check(CLI::IsMember({"direct", "refined"}));
    sketch_cmd->add_option("-o,--output", sketch_opt.output, "output NSKT path")
        ->required();
    sketch_cmd->add_option("--seed", sketch_opt.seed, "RNG seed (default 1729)");

    VerifyOptions verify_opt;
    CLI::App* verify_cmd = app.add_subcommand(
        "verify", "run the library's checked properties against an input");
    verify_cmd->add_option("input", verify_opt.input, "weights, sketch file, or synth descriptor")
        ->required();
    verify_cmd->add_option("-m,--bits", verify_opt.bits, "terms per filter")
        ->check(CLI::Range(1u, 1u << 20));
    verify_cmd->add_option("--seed", verify_opt.seed, "RNG seed (default 1729)");

    BenchOptions bench_opt;
    CLI::App* bench_cmd = app.add_subcommand(
        "bench", "count operations across execution schedules");
    bench_cmd->add_option("input", bench_opt.input, "weights or synth descriptor")
        ->required();
    bench_cmd->add_option("-m,--bits", bench_opt.bits, "terms per filter")
        ->required()
        ->check(CLI::Range(1u, 1u << 20));
    bench_cmd->add_option("--method", bench_opt.method, "direct or refined")
        ->check(CLI::IsMember({"direct", "refined"}));
    bench_cmd->add_option("--tree", bench_opt.tree, "all, mst, random, or none")
        ->check(CLI::IsMember({"all", "mst", "random", "none"}));
    bench_cmd->add_option("--seed", bench_opt.seed, "RNG seed (default 1729)");
    bench_cmd->add_option("--report", bench_opt.report_path, "report output path");
    bench_cmd->add_option("--format", bench_opt.format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
    bench_cmd->add_option("--fm-height", bench_opt.fm_height,
                          "feature map height (default kernel + 3)");
    bench_cmd->add_option("--fm-width", bench_opt.fm_width,
                          "feature map width (default kernel + 3)");
    bench_cmd->add_option("--stride", bench_opt.stride, "convolution stride")
        ->check(CLI::Range(1u, 1u << 16));

    std::string info_path;
    CLI::App* info_cmd =
        app.add_subcommand("info", "describe an NSKT file without modifying it");
    info_cmd->add_option("input", info_path, "NSKT path")->required();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    }

    try {
        if (sketch_cmd->parsed()) return cmd_sketch(sketch_opt, out);
        if (verify_cmd->parsed()) return cmd_verify(verify_opt, out, err);
        if (bench_cmd->parsed()) return cmd_bench(bench_opt, out);
        return cmd_info(info_path, out);
    } catch (const usage_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const io_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_io;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_io;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(std::move(args), std::cout, std::cerr);
}

}  // namespace netsketch::cli
