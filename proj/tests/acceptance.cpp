// Acceptance suite: one line per criterion, nonzero exit when any fails.
// Every tolerance is pinned here, not configurable.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "netsketch/assoc_conv.hpp"
#include "netsketch/model_io.hpp"
#include "netsketch/rng.hpp"
#include "netsketch/sketch.hpp"
#include "oracles.hpp"

using namespace netsketch;
using namespace netsketch::test;

namespace {

namespace fs = std::filesystem;

struct Check {
    bool ok = true;
    std::string detail;

    void require(bool condition, const std::string& message) {
        if (!condition && ok) {
            ok = false;
            detail = message;
        }
    }
};

struct Criterion {
    int id;
    std::string name;
    double time_limit_s;
    std::function<void(Check&)> body;
};

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
}

const std::vector<std::pair<std::size_t, Shape>> kSweepShapes = {
    {27, Shape{3, 3, 3}},
    {75, Shape{3, 5, 5}},
    {1200, Shape{48, 5, 5}},
};

void criterion_direct_bound(Check& c) {
    for (const auto& [t, shape] : kSweepShapes) {
        const auto filters =
            generate_synthetic(shape, 100, Distribution::gaussian, 1000 + t);
        for (const RealTensor& w : filters) {
            const double norm_sq = frobenius_norm_sq(w);
            const Sketch s = direct_sketch(w, 8);
            for (std::size_t m = 1; m <= 8; ++m) {
                const double actual =
                    s.residual_norms_sq[std::min(m, s.terms())];
                const double bound = direct_error_bound(norm_sq, t, m);
                c.require(actual <= bound * (1.0 + 1e-9),
                          "residual above the direct bound at t=" +
                              std::to_string(t) + " m=" + std::to_string(m));
            }
        }
    }
}

void criterion_refined_bound(Check& c) {
    for (const auto& [t, shape] : kSweepShapes) {
        const auto filters =
            generate_synthetic(shape, 100, Distribution::gaussian, 2000 + t);
        for (const RealTensor& w : filters) {
            const Sketch s = refined_sketch(w, 8);
            const BoundReport report = bound_report(w, s);
            for (std::size_t j = 0; j < s.terms(); ++j) {
                const double proj = report.projection_norms_sq[j];
                c.require(proj >= 0.0 && proj < double(t),
                          "projection norm out of range at t=" + std::to_string(t));
                const double factor = 1.0 - 1.0 / (double(t) - proj);
                const double before = s.residual_norms_sq[j];
                const double after = s.residual_norms_sq[j + 1];
                c.require(after <= before * factor * (1.0 + 1e-9) + 1e-300,
                          "per-step contraction violated at t=" +
                              std::to_string(t) + " step " + std::to_string(j));
            }
        }
    }
}

void criterion_one_term_optimality(Check& c) {
    std::mt19937_64 gen(303);
    for (std::uint32_t t = 3; t <= 12; ++t) {
        for (int trial = 0; trial < 20; ++trial) {
            RealTensor w(flat_shape(t));
            for (double& v : w.values()) v = gaussian(gen);
            const Sketch s = direct_sketch(w, 1);
            const double brute = brute_force_one_term_error(w);
            c.require(close_rel(s.residual_norms_sq[1], brute, 1e-9),
                      "greedy first step missed the exhaustive minimum at t=" +
                          std::to_string(t));
        }
    }
}

void criterion_least_squares(Check& c) {
    // worked instance
    const auto w = make_real({1, -2, 3});
    const Sketch refined = refined_sketch(w, 2);
    const Sketch direct = direct_sketch(w, 2);
    c.require(std::abs(refined.residual_norms_sq[2] - 0.5) < 1e-12,
              "refined worked instance should reach 0.5");
    c.require(std::abs(direct.residual_norms_sq[2] - 2.0 / 3.0) < 1e-12,
              "direct worked instance should reach 2/3");
    c.require(std::abs(refined.scales[0] - 2.25) < 1e-12 &&
                  std::abs(refined.scales[1] - 0.75) < 1e-12,
              "refined scales should be [2.25, 0.75]");

    // orthogonality across random tensors
    std::mt19937_64 gen(404);
    for (int trial = 0; trial < 100; ++trial) {
        RealTensor v(Shape{3, 3, 3});
        for (double& x : v.values()) x = gaussian(gen);
        const Sketch s = refined_sketch(v, 4);
        const RealTensor rec = reconstruct(s);
        RealTensor residual = v;
        for (std::size_t i = 0; i < residual.size(); ++i) residual[i] -= rec[i];
        const double limit = 1e-6 * std::sqrt(frobenius_norm_sq(v)) *
                             std::sqrt(double(v.size()));
        for (const BinaryTensor& b : s.basis) {
            c.require(std::abs(inner_product(residual, b)) <= limit,
                      "least-squares residual not orthogonal to the basis");
        }
    }
}

void criterion_associative_equals_direct(Check& c) {
    std::mt19937_64 gen(505);
    const std::vector<Shape> pool = {Shape{1, 3, 3},  Shape{2, 3, 3},
                                     Shape{3, 3, 3},  Shape{1, 5, 5},
                                     Shape{3, 5, 5},  Shape{12, 5, 5},
                                     Shape{48, 5, 5}};
    for (int layer = 0; layer < 50; ++layer) {
        const Shape shape = pool[uniform_below(gen, pool.size())];
        const std::uint32_t n = 1 + std::uint32_t(uniform_below(gen, 6));
        const std::uint32_t m = 1 + std::uint32_t(uniform_below(gen, 4));
        const auto filters =
            generate_synthetic(shape, n, Distribution::gaussian, 5000 + layer);

        std::vector<BinaryTensor> tensors;
        for (const RealTensor& w : filters) {
            const Sketch s = layer % 2 == 0 ? refined_sketch(w, m)
                                            : direct_sketch(w, m);
            tensors.insert(tensors.end(), s.basis.begin(), s.basis.end());
        }
        if (tensors.empty()) continue;

        FeatureMap fm(shape.c, shape.w + 2, shape.h + 2);
        for (double& v : fm.data) v = gaussian(gen);

        const DependencyTree mst = build_mst(tensors);
        const DependencyTree random_tree = build_random_tree(tensors, 700 + layer);
        for (std::uint32_t r = 0; r + shape.h <= fm.height; ++r) {
            for (std::uint32_t col = 0; col + shape.w <= fm.width; ++col) {
                const RealTensor x = extract_window(fm, shape, r, col);
                OpCounter c0, c1, c2;
                const auto direct = direct_convolve_all(x, tensors, c0);
                const auto via_mst = associative_convolve_all(x, tensors, mst, c1);
                const auto via_random =
                    associative_convolve_all(x, tensors, random_tree, c2);
                for (std::size_t i = 0; i < direct.size(); ++i) {
                    c.require(close_rel(via_mst[i], direct[i], 1e-9),
                              "mst-derived convolution diverged from direct");
                    c.require(close_rel(via_random[i], direct[i], 1e-9),
                              "random-tree convolution diverged from direct");
                }
            }
        }
    }
}

void criterion_fadd_reduction(Check& c) {
    const Shape shape{48, 5, 5};  // t = 1200
    const std::uint32_t n = 64, m = 3;
    const auto filters = generate_synthetic(shape, n, Distribution::gaussian, 606);

    std::vector<BinaryTensor> tensors;
    for (const RealTensor& w : filters) {
        const Sketch s = refined_sketch(w, m);
        tensors.insert(tensors.end(), s.basis.begin(), s.basis.end());
    }
    c.require(tensors.size() == std::size_t(n) * m, "expected a full mn pool");

    FeatureMap fm(shape.c, shape.w + 2, shape.h + 2);
    std::mt19937_64 gen(607);
    for (double& v : fm.data) v = gaussian(gen);

    const DependencyTree mst = build_mst(tensors);
    const DependencyTree random_tree = build_random_tree(tensors, 606);
    OpCounter direct_counter, mst_counter, random_counter;
    for (std::uint32_t r = 0; r + shape.h <= fm.height; ++r) {
        for (std::uint32_t col = 0; col + shape.w <= fm.width; ++col) {
            const RealTensor x = extract_window(fm, shape, r, col);
            (void)direct_convolve_all(x, tensors, direct_counter);
            (void)associative_convolve_all(x, tensors, mst, mst_counter);
            (void)associative_convolve_all(x, tensors, random_tree, random_counter);
        }
    }
    std::ostringstream summary;
    summary << "direct=" << direct_counter.fadds << " mst=" << mst_counter.fadds
            << " random=" << random_counter.fadds;
    c.require(mst_counter.fadds * 3 <= direct_counter.fadds * 2,
              "mst did not reach a 1.5x FADD reduction (" + summary.str() + ")");
    c.require(mst_counter.fadds <= random_counter.fadds,
              "mst lost to a random tree (" + summary.str() + ")");
}

void criterion_compression_arithmetic(Check& c) {
    const AccountingReport r = storage_and_flops(Shape{48, 5, 5}, 256, 3, 729);
    c.require(r.compression_factor > 10.3 && r.compression_factor < 10.5,
              "compression factor out of [10.3, 10.5]");
    c.require(r.fmul_factor == 400.0, "FMUL factor should be exactly 400");
    c.require(r.full_precision_fmuls / r.sketched_fmuls == 400,
              "FMUL counts should reduce 400-fold");
}

void criterion_mst_optimality(Check& c) {
    std::mt19937_64 gen(808);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t count = 2 + uniform_below(gen, 6);
        const std::uint32_t t = 2 + std::uint32_t(uniform_below(gen, 15));
        std::vector<BinaryTensor> tensors;
        for (std::size_t i = 0; i < count; ++i) {
            BinaryTensor b(flat_shape(t));
            for (std::uint32_t k = 0; k < t; ++k) {
                if (gen() & 1) b.set_sign(k, +1);
            }
            tensors.push_back(std::move(b));
        }
        std::vector<std::vector<std::int64_t>> dist(
            count, std::vector<std::int64_t>(count));
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                dist[i][j] = distance(tensors[i], tensors[j]);
            }
        }
        c.require(build_mst(tensors).total_weight() == brute_force_mst_weight(dist),
                  "prim's tree heavier than the exhaustive minimum");
    }
}

void criterion_energy_behavior(Check& c) {
    const auto filters =
        generate_synthetic(Shape{3, 3, 3}, 100, Distribution::gaussian, 909);
    int refined_wins = 0;
    double refined_mean = 0.0, direct_mean = 0.0;
    for (const RealTensor& w : filters) {
        const Sketch d = direct_sketch(w, 3);
        const Sketch r = refined_sketch(w, 3);
        const auto ed = energy_curve(w, d);
        const auto er = energy_curve(w, r);
        for (std::size_t j = 0; j + 1 < ed.size(); ++j) {
            c.require(ed[j + 1] >= ed[j] - 1e-12, "direct energy curve decreased");
        }
        for (std::size_t j = 0; j + 1 < er.size(); ++j) {
            c.require(er[j + 1] >= er[j] - 1e-12, "refined energy curve decreased");
        }
        if (er.back() >= ed.back() - 1e-12) ++refined_wins;
        refined_mean += er.back();
        direct_mean += ed.back();
    }
    c.require(refined_wins >= 95, "refined beat direct only " +
                                      std::to_string(refined_wins) + "/100 times");
    c.require(refined_mean >= direct_mean,
              "refined mean energy below the direct mean");
}

void criterion_io_round_trips(Check& c) {
    const fs::path dir =
        fs::temp_directory_path() /
        ("netsketch-acceptance-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);

    LayerWeights layer;
    layer.spec = {"round", 3, Shape{2, 3, 3}, 4};
    layer.filters = generate_synthetic(layer.spec.shape, layer.spec.n,
                                       Distribution::gaussian, 1010);

    const fs::path w1 = dir / "a.nskw";
    const fs::path w2 = dir / "b.nskw";
    save_weights(w1, std::vector{layer});
    save_weights(w2, load_weights(w1));
    c.require(slurp(w1) == slurp(w2), "NSKW round trip changed bytes");

    LayerSketches ls;
    ls.spec = layer.spec;
    ls.declared_m = 3;
    for (const RealTensor& w : layer.filters) {
        ls.sketches.push_back(refined_sketch(w, 3));
    }
    const fs::path s1 = dir / "a.nskt";
    const fs::path s2 = dir / "b.nskt";
    save_sketch(s1, std::vector{ls});
    save_sketch(s2, load_sketch(s1));
    c.require(slurp(s1) == slurp(s2), "NSKT round trip changed bytes");

    const auto clean = slurp(s1);
    std::mt19937_64 gen(1011);
    int detected = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto corrupted = clean;
        const std::size_t bit = uniform_below(gen, corrupted.size() * 8);
        corrupted[bit / 8] ^= std::uint8_t(1) << (bit % 8);
        const fs::path victim = dir / "flip.nskt";
        spit(victim, corrupted);
        try {
            (void)load_sketch(victim);
        } catch (const io_error&) {
            ++detected;
        }
    }
    c.require(detected == 100, "bit flips detected only " +
                                   std::to_string(detected) + "/100 times");

    std::error_code ec;
    fs::remove_all(dir, ec);
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "direct-method error bound (all t, m=1..8)", 10.0,
         criterion_direct_bound},
        {2, "refined-method per-step contraction", 30.0, criterion_refined_bound},
        {3, "one-term global optimality (t=3..12)", 60.0,
         criterion_one_term_optimality},
        {4, "least-squares refinement and orthogonality", 1.0,
         criterion_least_squares},
        {5, "associative = direct on 50 random layers", 60.0,
         criterion_associative_equals_direct},
        {6, "mst FADD reduction at t=1200, n=64, m=3", 120.0,
         criterion_fadd_reduction},
        {7, "compression and FMUL arithmetic", 10.0,
         criterion_compression_arithmetic},
        {8, "prim equals exhaustive minimum (100 instances)", 10.0,
         criterion_mst_optimality},
        {9, "refined energy dominates direct statistically", 10.0,
         criterion_energy_behavior},
        {10, "file round trips and corruption detection", 10.0,
         criterion_io_round_trips},
    };

    bool all_ok = true;
    for (const Criterion& criterion : criteria) {
        Check check;
        const auto start = std::chrono::steady_clock::now();
        try {
            criterion.body(check);
        } catch (const std::exception& e) {
            check.require(false, std::string("exception: ") + e.what());
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        check.require(seconds < criterion.time_limit_s,
                      "exceeded the " + std::to_string(criterion.time_limit_s) +
                          "s budget");
        std::ostringstream line;
        line.precision(2);
        line << (check.ok ? "[PASS]" : "[FAIL]") << " criterion " << criterion.id
             << ": " << criterion.name << " (" << std::fixed << seconds << "s)";
        if (!check.ok) line << " -- " << check.detail;
        std::cout << line.str() << "\n";
        all_ok = all_ok && check.ok;
    }
    std::cout << (all_ok ? "acceptance: all criteria passed"
                         : "acceptance: FAILURES present")
              << "\n";
    return all_ok ? 0 : 1;
}
