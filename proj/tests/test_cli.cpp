#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "fmo/bench.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

/// Runs the CLI with stderr folded into the captured output.
Result cli(const std::string& args) {
    const std::string cmd = std::string("\"") + FMO_BENCH_EXE + "\" " + args + " 2>&1";
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("fmo_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

} // namespace

TEST(Cli, ListOptimizers) {
    const auto r = cli("list-optimizers");
    EXPECT_EQ(r.code, 0);
    std::istringstream is(r.out);
    std::vector<std::string> names;
    for (std::string line; std::getline(is, line);) names.push_back(line);
    ASSERT_EQ(names.size(), fmo::kAllOptimizers.size());
    for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(names[i], fmo::to_string(fmo::kAllOptimizers[i]));
}

TEST(Cli, ListCases) {
    const auto r = cli("list-cases");
    EXPECT_EQ(r.code, 0);
    for (auto name : fmo::kCaseNames) EXPECT_NE(r.out.find(std::string(name)), std::string::npos);
}

TEST(Cli, NoSubcommandFails) { EXPECT_NE(cli("").code, 0); }

TEST(Cli, RunWithMissingConfigWritesNothing) {
    const auto dir = scratch("missing");
    const auto out = dir / "out";
    const auto r = cli("run --config " + (dir / "absent.json").string() + " --out " + out.string());
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.out.find("absent.json"), std::string::npos);
    EXPECT_FALSE(fs::exists(out));
    EXPECT_NE(cli("run").code, 0);
}

TEST(Cli, MalformedConfigNamesTheField) {
    const auto dir = scratch("malformed");
    write(dir / "bad.json", R"({"cases": ["prostate"], "optimizers": ["LBFGS", "Newton"]})");
    auto r = cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "out").string());
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.out.find("optimizers[1]"), std::string::npos) << r.out;
    EXPECT_FALSE(fs::exists(dir / "out"));

    write(dir / "bad2.json", R"({"cases": ["prostate"], "optimizers": ["LBFGS"], "repetitions": "three"})");
    r = cli("run --config " + (dir / "bad2.json").string());
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.out.find("repetitions"), std::string::npos) << r.out;

    write(dir / "bad3.json", R"({"cases": ["prostate"], )");
    r = cli("run --config " + (dir / "bad3.json").string());
    EXPECT_NE(r.code, 0);
}

TEST(Cli, RunThenDvh) {
    const auto dir = scratch("run");
    write(dir / "config.json", R"({"cases": ["multi_ptv"],
        "optimizers": [{"id": "LBFGS", "max_iterations": 5}, {"id": "Rprop", "max_iterations": 5}],
        "repetitions": 1})");
    const auto out = dir / "out";
    auto r = cli("run --quiet --config " + (dir / "config.json").string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE(fs::exists(out / "summary.json"));
    const auto trace = out / "traces" / "multi_ptv__LBFGS.csv";
    ASSERT_TRUE(fs::exists(trace));
    EXPECT_TRUE(fs::exists(out / "traces" / "multi_ptv__Rprop.csv"));

    auto config = fmo::load_benchmark_config((dir / "config.json").string());
    config.output_directory = out.string();
    const auto cache = fmo::detail::matrix_cache_path(config, "multi_ptv");
    ASSERT_TRUE(fs::exists(cache));
    const auto dvh_csv = dir / "dvh.csv";
    r = cli("dvh --case multi_ptv --trace " + trace.string() + " --out " + dvh_csv.string() + " --matrix " + cache);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("total cost"), std::string::npos);
    EXPECT_TRUE(r.out.find("PASS") != std::string::npos || r.out.find("FAIL") != std::string::npos);
    std::ifstream is(dvh_csv);
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "structure,dose_gy,volume_fraction");
    std::string first;
    std::getline(is, first);
    EXPECT_NE(first.find(",0,1"), std::string::npos) << first;

    EXPECT_NE(cli("dvh --case prostate --trace " + trace.string()).code, 0);
    EXPECT_NE(cli("dvh --case liver --trace " + trace.string()).code, 0);
    EXPECT_NE(cli("dvh --case multi_ptv --trace " + (dir / "none.csv").string()).code, 0);
}

TEST(Cli, ExportMatrix) {
    const auto dir = scratch("export");
    const auto file = dir / "m.bin";
    const auto r = cli("export-matrix --case prostate --out " + file.string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto m = fmo::read_triplet_file(file.string());
    EXPECT_GT(m.nnz(), 0u);
    EXPECT_NE(cli("export-matrix --case nowhere --out " + file.string()).code, 0);
}

TEST(Cli, ShippedDefaultConfigParses) {
    const auto c = fmo::load_benchmark_config(std::string(FMO_SOURCE_DIR) + "/configs/default_benchmark.json");
    EXPECT_EQ(c.cases.size(), 4u);
    EXPECT_GE(c.optimizers.size(), 12u);
}
