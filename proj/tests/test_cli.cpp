#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "netsketch/assoc_conv.hpp"
#include "netsketch/cli.hpp"
#include "netsketch/model_io.hpp"
#include "netsketch/rng.hpp"
#include "netsketch/sketch.hpp"
#include "oracles.hpp"

using namespace netsketch;
using namespace netsketch::test;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("netsketch-cli-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

struct RunResult {
    int code;
    std::string out;
    std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(std::move(args), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

fs::path write_sample_weights(const fs::path& dir, std::uint64_t seed) {
    LayerWeights layer;
    layer.spec = {"conv_t", 2, Shape{1, 2, 2}, 9};
    layer.filters = generate_synthetic(layer.spec.shape, layer.spec.n,
                                       Distribution::gaussian, seed);
    const fs::path file = dir / "weights.nskw";
    save_weights(file, std::vector{layer});
    return file;
}

}  // namespace

TEST_CASE("sketch command writes a loadable file and matches the library") {
    TempDir dir;
    const fs::path weights = write_sample_weights(dir.path, 21);
    const fs::path out_path = dir.path / "out.nskt";

    const auto result = run_cli({"sketch", weights.string(), "--bits", "2",
                                 "--method", "refined", "-o", out_path.string()});
    CHECK(result.code == cli::exit_ok);
    CHECK(result.out.find("energy=") != std::string::npos);
    CHECK(result.out.find("compression=") != std::string::npos);

    // thin-wrapper contract: the file holds exactly what the library produces
    const auto loaded = load_sketch(out_path);
    REQUIRE(loaded.size() == 1);
    const auto reference = load_weights(weights);
    for (std::size_t f = 0; f < reference[0].filters.size(); ++f) {
        const Sketch direct = refined_sketch(reference[0].filters[f], 2);
        const Sketch& stored = loaded[0].sketches[f];
        CHECK(direct.scales == stored.scales);
        CHECK(direct.residual_norms_sq == stored.residual_norms_sq);
        CHECK(reconstruct(direct) == reconstruct(stored));
    }
}

TEST_CASE("sketch command accepts synthetic descriptors") {
    TempDir dir;
    const fs::path out_path = dir.path / "synth.nskt";
    const auto result = run_cli({"sketch", "synth:gaussian:2x3x3:n=4:seed=5",
                                 "--bits", "3", "-o", out_path.string()});
    CHECK(result.code == cli::exit_ok);
    const auto loaded = load_sketch(out_path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].spec.n == 4);
    CHECK(loaded[0].spec.shape == Shape{2, 3, 3});
}

TEST_CASE("usage errors exit with code 2") {
    TempDir dir;
    const fs::path weights = write_sample_weights(dir.path, 22);

    const auto zero_bits = run_cli({"sketch", weights.string(), "--bits", "0",
                                    "-o", (dir.path / "x.nskt").string()});
    CHECK(zero_bits.code == cli::exit_usage);

    const auto no_output = run_cli({"sketch", weights.string(), "--bits", "2"});
    CHECK(no_output.code == cli::exit_usage);

    const auto bad_synth = run_cli({"sketch", "synth:gaussian:nonsense", "--bits",
                                    "2", "-o", (dir.path / "y.nskt").string()});
    CHECK(bad_synth.code == cli::exit_usage);

    const auto no_command = run_cli({});
    CHECK(no_command.code == cli::exit_usage);
}

TEST_CASE("missing input exits with code 3") {
    const auto result = run_cli({"sketch", "/nonexistent/w.nskw", "--bits", "2",
                                 "-o", "/tmp/never.nskt"});
    CHECK(result.code == cli::exit_io);
    CHECK(result.err.find("error:") != std::string::npos);
}

TEST_CASE("verify passes on healthy inputs") {
    const auto result = run_cli({"verify", "synth:gaussian:2x2x2:n=3:seed=9",
                                 "--bits", "3"});
    CHECK(result.code == cli::exit_ok);
    CHECK(result.out.find("[FAIL]") == std::string::npos);
    CHECK(result.out.find("direct-error-bound") != std::string::npos);
    CHECK(result.out.find("refined-step-contraction") != std::string::npos);
    CHECK(result.out.find("ls-orthogonality") != std::string::npos);
    CHECK(result.out.find("one-term-optimality") != std::string::npos);
    CHECK(result.out.find("assoc-equals-direct") != std::string::npos);
    CHECK(result.out.find("fmul-invariance") != std::string::npos);
}

TEST_CASE("verify reports a corrupted sketch file") {
    TempDir dir;
    const fs::path weights = write_sample_weights(dir.path, 23);
    const fs::path out_path = dir.path / "out.nskt";
    REQUIRE(run_cli({"sketch", weights.string(), "--bits", "2", "-o",
                     out_path.string()})
                .code == cli::exit_ok);

    const auto clean = run_cli({"verify", out_path.string()});
    CHECK(clean.code == cli::exit_ok);
    CHECK(clean.out.find("file-integrity") != std::string::npos);

    // flip one payload bit
    std::string bytes = slurp_text(out_path);
    bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x10);
    std::ofstream(out_path, std::ios::binary | std::ios::trunc) << bytes;

    const auto corrupted = run_cli({"verify", out_path.string()});
    CHECK(corrupted.code == cli::exit_verify);
    CHECK(corrupted.out.find("[FAIL] file-integrity") != std::string::npos);
}

TEST_CASE("bench reports the direct-mode count law and stays deterministic") {
    TempDir dir;
    const fs::path report_a = dir.path / "a.json";
    const fs::path report_b = dir.path / "b.json";

    const std::vector<std::string> base{
        "bench",      "synth:gaussian:1x3x3:n=2:seed=4",
        "--bits",     "2",
        "--seed",     "11",
        "--fm-height", "5",
        "--fm-width", "5"};

    auto with_report = [&](const fs::path& p) {
        auto args = base;
        args.push_back("--report");
        args.push_back(p.string());
        return args;
    };

    const auto first = run_cli(with_report(report_a));
    CHECK(first.code == cli::exit_ok);
    const auto second = run_cli(with_report(report_b));
    CHECK(second.code == cli::exit_ok);
    CHECK(slurp_text(report_a) == slurp_text(report_b));  // byte-stable

    const auto report = nlohmann::json::parse(slurp_text(report_a));
    CHECK(report.at("format") == "netsketch-report-v1");
    CHECK(report.at("conventions").is_string());
    const auto& layer = report.at("layers").at(0);

    // tree=none pays exactly mn * t FADDs per window in the binary stage
    const std::uint64_t positions = layer.at("spatial_positions").get<std::uint64_t>();
    const std::uint64_t mn = 2 * 2, t = 9;
    CHECK(layer.at("modes").at("none").at("binary_conv").at("fadds").get<std::uint64_t>() ==
          positions * mn * t);

    // FMULs agree across every mode
    const auto fmuls_of = [&](const char* mode) {
        return layer.at("modes").at(mode).at("total").at("fmuls").get<std::uint64_t>();
    };
    CHECK(fmuls_of("none") == fmuls_of("mst"));
    CHECK(fmuls_of("none") == fmuls_of("random"));

    // reductions present and sane
    CHECK(layer.at("fadd_reduction").contains("mst_vs_direct"));
    CHECK(layer.at("fadd_reduction").at("mst_vs_direct").get<double>() >= 1.0);
}

TEST_CASE("bench reaches the expected reduction at the conv2 scale") {
    TempDir dir;
    const fs::path report = dir.path / "conv2.json";
    const auto result = run_cli({"bench", "synth:gaussian:48x5x5:n=64:seed=7",
                                 "--bits", "3", "--seed", "7", "--fm-height", "6",
                                 "--fm-width", "6", "--report", report.string()});
    REQUIRE(result.code == cli::exit_ok);
    const auto parsed = nlohmann::json::parse(slurp_text(report));
    const auto& layer = parsed.at("layers").at(0);
    CHECK(layer.at("t") == 1200);
    CHECK(layer.at("fadd_reduction").at("mst_vs_direct").get<double>() >= 1.5);
    CHECK(layer.at("storage").at("compression_factor").get<double>() > 10.3);
    CHECK(layer.at("storage").at("compression_factor").get<double>() < 10.5);
    CHECK(layer.at("storage").at("fmul_factor").get<double>() == 400.0);

    const auto fadds = [&](const char* mode) {
        return layer.at("modes").at(mode).at("binary_conv").at("fadds")
            .get<std::uint64_t>();
    };
    CHECK(fadds("mst") <= fadds("random"));
    CHECK(fadds("random") <= fadds("none"));

    // the reported mst counters are exactly what the library produces for
    // the same seeds and geometry
    const Shape shape{48, 5, 5};
    const auto filters = generate_synthetic(shape, 64, Distribution::gaussian, 7);
    std::vector<BinaryTensor> tensors;
    for (const RealTensor& w : filters) {
        const Sketch s = refined_sketch(w, 3);
        tensors.insert(tensors.end(), s.basis.begin(), s.basis.end());
    }
    FeatureMap fm(shape.c, 6, 6);
    std::mt19937_64 gen(7);  // bench seeds the map with seed + layer index
    for (double& v : fm.data) v = gaussian(gen);
    const DependencyTree mst = build_mst(tensors);
    OpCounter counter;
    for (std::uint32_t r = 0; r + shape.h <= fm.height; ++r) {
        for (std::uint32_t c = 0; c + shape.w <= fm.width; ++c) {
            const RealTensor x = extract_window(fm, shape, r, c);
            (void)associative_convolve_all(x, tensors, mst, counter);
        }
    }
    const auto& reported = layer.at("modes").at("mst").at("binary_conv");
    CHECK(reported.at("fadds").get<std::uint64_t>() == counter.fadds);
    CHECK(reported.at("fmuls").get<std::uint64_t>() == counter.fmuls);
    CHECK(reported.at("ternary_selects").get<std::uint64_t>() ==
          counter.ternary_selects);
    CHECK(reported.at("doublings").get<std::uint64_t>() == counter.doublings);
}

TEST_CASE("bench emits csv when asked") {
    TempDir dir;
    const fs::path report = dir.path / "report.csv";
    const auto result =
        run_cli({"bench", "synth:gaussian:1x2x2:n=2:seed=3", "--bits", "2",
                 "--report", report.string(), "--format", "csv"});
    CHECK(result.code == cli::exit_ok);
    const std::string text = slurp_text(report);
    CHECK(text.rfind("# netsketch-report-v1\n", 0) == 0);  // conventions header
    CHECK(text.find("\nlayer,section,metric,key,value\n") != std::string::npos);
    CHECK(text.find(",counts,fadds,") != std::string::npos);
    CHECK(text.find(",energy,energy,") != std::string::npos);
}

TEST_CASE("reports ignore the worker thread count") {
    TempDir dir;
    const fs::path ra = dir.path / "t1.json";
    const fs::path rb = dir.path / "t4.json";
    const auto bench = [](const fs::path& report) {
        return run_cli({"bench", "synth:gaussian:2x3x3:n=6:seed=2", "--bits", "2",
                        "--report", report.string()});
    };
    setenv("NETSKETCH_THREADS", "1", 1);
    CHECK(bench(ra).code == cli::exit_ok);
    setenv("NETSKETCH_THREADS", "4", 1);
    CHECK(bench(rb).code == cli::exit_ok);
    unsetenv("NETSKETCH_THREADS");
    CHECK(slurp_text(ra) == slurp_text(rb));
}

TEST_CASE("bench restricted to one tree mode") {
    TempDir dir;
    const fs::path report = dir.path / "none.json";
    const auto result =
        run_cli({"bench", "synth:gaussian:1x2x2:n=1:seed=3", "--bits", "1",
                 "--tree", "none", "--report", report.string()});
    CHECK(result.code == cli::exit_ok);
    const auto parsed = nlohmann::json::parse(slurp_text(report));
    const auto& modes = parsed.at("layers").at(0).at("modes");
    CHECK(modes.contains("none"));
    CHECK(!modes.contains("mst"));
}

TEST_CASE("info describes a sketch file") {
    TempDir dir;
    const fs::path weights = write_sample_weights(dir.path, 25);
    const fs::path out_path = dir.path / "out.nskt";
    REQUIRE(run_cli({"sketch", weights.string(), "--bits", "2", "-o",
                     out_path.string()})
                .code == cli::exit_ok);

    const auto result = run_cli({"info", out_path.string()});
    CHECK(result.code == cli::exit_ok);
    CHECK(result.out.find("pool=") != std::string::npos);
    CHECK(result.out.find("compression") != std::string::npos);
    CHECK(result.out.find("storage bits") != std::string::npos);

    SUBCASE("truncated files produce a clean error and no partial output") {
        std::string bytes = slurp_text(out_path);
        bytes.resize(bytes.size() / 3);
        std::ofstream(out_path, std::ios::binary | std::ios::trunc) << bytes;
        const auto broken = run_cli({"info", out_path.string()});
        CHECK(broken.code != cli::exit_ok);
        CHECK(broken.out.empty());
        CHECK(broken.err.find("error:") != std::string::npos);
    }
}

TEST_CASE("info compression matches the closed form at full layer scale") {
    TempDir dir;
    LayerSketches ls;
    ls.spec = {"conv_big", 1, Shape{48, 5, 5}, 1};
    ls.declared_m = 3;
    Sketch s = refined_sketch(
        generate_synthetic(ls.spec.shape, 1, Distribution::gaussian, 77)[0], 3);
    ls.sketches = {std::move(s)};
    const fs::path file = dir.path / "big.nskt";
    save_sketch(file, std::vector{ls});

    const auto result = run_cli({"info", file.string()});
    CHECK(result.code == cli::exit_ok);
    CHECK(result.out.find("compression 10.3") != std::string::npos);
    CHECK(result.out.find("fmul factor 400") != std::string::npos);
}
