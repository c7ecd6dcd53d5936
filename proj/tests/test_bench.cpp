#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fmo/bench.hpp"

using namespace fmo;
namespace fs = std::filesystem;

namespace {

ConvergenceTrace make_trace(std::string case_name, OptimizerId id, std::vector<double> costs) {
    ConvergenceTrace t;
    t.case_name = std::move(case_name);
    t.optimizer = id;
    for (std::size_t k = 0; k < costs.size(); ++k)
        t.records.push_back({static_cast<int>(k), costs[k], 1.0, 0.5 * static_cast<double>(k), static_cast<long>(k + 1)});
    t.final_b = Vector::Zero(1);
    return t;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("fmo_test_bench_" + name);
    fs::remove_all(p);
    return p;
}

BenchmarkConfig tiny_config(const fs::path& out, int iterations, std::vector<OptimizerId> ids) {
    BenchmarkConfig c;
    c.cases = {"multi_ptv"};
    for (auto id : ids) {
        auto o = OptimizerConfig::defaults(id);
        o.max_iterations = iterations;
        c.optimizers.push_back(o);
    }
    c.output_directory = out.string();
    c.repetitions = 1;
    return c;
}

std::vector<double> cost_column(const fs::path& csv) {
    std::ifstream is(csv);
    std::vector<double> out;
    for (const auto& r : read_trace_csv(is)) out.push_back(r.cost);
    return out;
}

std::string config_error(const nlohmann::json& j) {
    try {
        parse_benchmark_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST(Summarize, SingleTraceIsItsOwnReference) {
    const auto s = summarize({make_trace("c", OptimizerId::LBFGS, {100.0, 50.0, 10.5, 10.05, 10.0})});
    ASSERT_EQ(s.cases.size(), 1u);
    EXPECT_DOUBLE_EQ(s.cases[0].best_final_cost, 10.0);
    EXPECT_DOUBLE_EQ(s.cases[0].threshold, 10.1);
    const auto& r = s.cases[0].runs[0];
    ASSERT_TRUE(r.iterations_to_threshold.has_value());
    EXPECT_EQ(*r.iterations_to_threshold, 3);
    EXPECT_DOUBLE_EQ(*r.time_to_threshold, 1.5);
    EXPECT_EQ(r.iterations, 4);
    EXPECT_DOUBLE_EQ(r.mean_iteration_seconds, 2.0 / 4.0);
}

TEST(Summarize, HandBuiltCrossings) {
    const std::vector<ConvergenceTrace> traces{
        make_trace("a", OptimizerId::GD, {10.0, 8.0, 6.0, 4.0, 2.03, 2.02}),
        make_trace("a", OptimizerId::NewtonCG, {10.0, 3.0, 2.0}),
        make_trace("a", OptimizerId::Adam, {10.0, 9.0, 8.0}),
        make_trace("b", OptimizerId::GD, {5.0, 1.0}),
        make_trace("b", OptimizerId::NewtonCG, {5.0, 1.2, 1.0099, 1.001}),
    };
    const auto s = summarize(traces);
    ASSERT_EQ(s.cases.size(), 2u);
    const auto& a = *s.find("a");
    EXPECT_DOUBLE_EQ(a.best_final_cost, 2.0);
    EXPECT_EQ(*a.find(OptimizerId::GD)->iterations_to_threshold, 5);
    EXPECT_EQ(*a.find(OptimizerId::NewtonCG)->iterations_to_threshold, 2);
    EXPECT_FALSE(a.find(OptimizerId::Adam)->iterations_to_threshold.has_value());
    EXPECT_FALSE(a.find(OptimizerId::Adam)->time_to_threshold.has_value());
    const auto& b = *s.find("b");
    EXPECT_DOUBLE_EQ(b.best_final_cost, 1.0);
    EXPECT_EQ(*b.find(OptimizerId::GD)->iterations_to_threshold, 1);
    EXPECT_EQ(*b.find(OptimizerId::NewtonCG)->iterations_to_threshold, 2);
}

TEST(Summarize, NonFiniteRunDoesNotSetReference) {
    auto bad = make_trace("c", OptimizerId::Adam, {3.0, std::nan("")});
    bad.termination = Termination::NumericalFailure;
    const auto s = summarize({make_trace("c", OptimizerId::GD, {3.0, 2.0}), bad});
    EXPECT_DOUBLE_EQ(s.cases[0].best_final_cost, 2.0);
    EXPECT_FALSE(s.cases[0].find(OptimizerId::Adam)->iterations_to_threshold.has_value());
    const nlohmann::json j = s;
    EXPECT_TRUE(j["cases"][0]["runs"][1]["iterations_to_threshold"].is_null());
    EXPECT_EQ(j["cases"][0]["runs"][1]["termination"], "NumericalFailure");
}

TEST(TraceCsv, RoundTripsExactly) {
    auto t = make_trace("c", OptimizerId::BFGS, {1.0 / 3.0, 0.1, 1e-300});
    t.records[1].elapsed = 0.123456789012345678;
    std::stringstream ss;
    write_trace_csv(ss, t);
    const auto back = read_trace_csv(ss);
    ASSERT_EQ(back.size(), t.records.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        EXPECT_EQ(back[k].iteration, t.records[k].iteration);
        EXPECT_EQ(back[k].cost, t.records[k].cost);
        EXPECT_EQ(back[k].elapsed, t.records[k].elapsed);
        EXPECT_EQ(back[k].function_evals, t.records[k].function_evals);
    }
}

TEST(TraceCsv, RejectsMalformedInput) {
    std::istringstream bad_header("iter,cost\n0,1\n");
    EXPECT_THROW(read_trace_csv(bad_header), ConfigError);
    std::istringstream short_row("iteration,cost,gradient_norm,elapsed_seconds,function_evals\n0,1,2\n");
    EXPECT_THROW(read_trace_csv(short_row), ConfigError);
    std::istringstream reordered("iteration,cost,gradient_norm,elapsed_seconds,function_evals\n1,1,1,0,1\n0,1,1,0,1\n");
    EXPECT_THROW(read_trace_csv(reordered), ConfigError);
}

TEST(FluenceCsv, RoundTrip) {
    const Vector b = (Vector(3) << 0.5, -1.0 / 7.0, 0.0).finished();
    std::stringstream ss;
    write_fluence_csv(ss, b);
    EXPECT_EQ(read_fluence_csv(ss), b);
}

TEST(BenchmarkConfig, ErrorsNameTheField) {
    EXPECT_NE(config_error({{"optimizers", {"LBFGS"}}}).find("'cases'"), std::string::npos);
    EXPECT_NE(config_error({{"cases", {"prostate"}}}).find("'optimizers'"), std::string::npos);
    EXPECT_NE(config_error({{"cases", {"liver"}}, {"optimizers", {"LBFGS"}}}).find("'cases[0]'"), std::string::npos);
    EXPECT_NE(config_error({{"cases", {"prostate"}}, {"optimizers", {"LBFGS", "SLSQP"}}}).find("'optimizers[1]'"),
              std::string::npos);
    EXPECT_NE(config_error({{"cases", {"prostate"}}, {"optimizers", {"LBFGS"}}, {"repetitions", 0}}).find("'repetitions'"),
              std::string::npos);
    EXPECT_NE(config_error({{"cases", {"prostate"}}, {"optimizers", {"LBFGS"}}, {"repetitons", 2}}).find("'repetitons'"),
              std::string::npos);
    EXPECT_NE(config_error({{"cases", {"prostate"}}, {"optimizers", {{{"id", "Adam"}, {"learning_rate", -1.0}}}}})
                  .find("'optimizers[0]'"),
              std::string::npos);
    EXPECT_NE(config_error({{"cases", {"prostate"}}, {"optimizers", {"LBFGS"}}, {"problem", {{"n_beams", 0}}}}).find("'problem'"),
              std::string::npos);
    EXPECT_NE(config_error({{"cases", {"prostate", "prostate"}}, {"optimizers", {"LBFGS"}}}).find("'cases[1]'"),
              std::string::npos);
    EXPECT_EQ(config_error({{"cases", {"prostate"}}, {"optimizers", {"LBFGS", {{"id", "Adam"}}}}}), "");
}

TEST(BenchmarkConfig, JsonRoundTrip) {
    const auto c = parse_benchmark_config(
        {{"cases", {"prostate", "head_neck"}}, {"optimizers", {"LBFGS", {{"id", "Adam"}, {"learning_rate", 0.2}}}}, {"repetitions", 2}});
    const nlohmann::json j = c;
    EXPECT_EQ(nlohmann::json(parse_benchmark_config(j)), j);
    EXPECT_EQ(c.optimizers[1].learning_rate, 0.2);
}

TEST(BenchmarkJobs, ReadsEnvironment) {
    ::setenv(kBenchJobsEnv, "3", 1);
    EXPECT_EQ(benchmark_jobs(), 3u);
    ::setenv(kBenchJobsEnv, "zero", 1);
    EXPECT_GE(benchmark_jobs(), 1u);
    ::unsetenv(kBenchJobsEnv);
}

TEST(RunBenchmark, ThreeIterationsGiveFourRows) {
    const auto out = scratch("rows");
    const auto r = run_benchmark(tiny_config(out, 3, {OptimizerId::LBFGS}));
    std::size_t csvs = 0;
    for (const auto& e : fs::directory_iterator(out / "traces"))
        if (e.path().string().ends_with(".csv") && !e.path().string().ends_with(".fluence.csv")) ++csvs;
    EXPECT_EQ(csvs, 1u);
    const auto costs = cost_column(out / "traces" / "multi_ptv__LBFGS.csv");
    EXPECT_EQ(costs.size(), 4u);
    EXPECT_TRUE(fs::exists(out / "summary.json"));
    EXPECT_TRUE(fs::exists(out / "traces" / "multi_ptv__LBFGS.fluence.csv"));
    EXPECT_EQ(r.traces.size(), 1u);
}

TEST(RunBenchmark, CachedRerunGivesIdenticalCosts) {
    const auto out = scratch("determinism");
    const auto config = tiny_config(out, 6, {OptimizerId::NewtonCG, OptimizerId::Adam});
    run_benchmark(config);
    const auto first_newton = cost_column(out / "traces" / "multi_ptv__NewtonCG.csv");
    const auto first_adam = cost_column(out / "traces" / "multi_ptv__Adam.csv");
    ASSERT_TRUE(fs::exists(detail::matrix_cache_path(config, "multi_ptv")));
    run_benchmark(config);
    EXPECT_EQ(cost_column(out / "traces" / "multi_ptv__NewtonCG.csv"), first_newton);
    EXPECT_EQ(cost_column(out / "traces" / "multi_ptv__Adam.csv"), first_adam);
}

TEST(RunBenchmark, SummaryFromFilesMatchesInMemory) {
    const auto out = scratch("from_files");
    auto config = tiny_config(out, 5, {OptimizerId::LBFGS, OptimizerId::GD, OptimizerId::Rprop});
    config.repetitions = 2;
    const auto r = run_benchmark(config);
    std::vector<ConvergenceTrace> reread;
    for (const auto& opt : config.optimizers) {
        ConvergenceTrace t;
        t.case_name = "multi_ptv";
        t.optimizer = opt.id;
        std::ifstream is(out / "traces" / (trace_stem("multi_ptv", opt.id) + ".csv"));
        t.records = read_trace_csv(is);
        reread.push_back(t);
    }
    const nlohmann::json from_files = summarize(reread);
    nlohmann::json in_memory = r.summary;
    for (auto& run : in_memory["cases"][0]["runs"]) run["termination"] = std::string(to_string(Termination::MaxIterations));
    EXPECT_EQ(from_files, in_memory);

    std::ifstream is(out / "summary.json");
    const auto written = nlohmann::json::parse(is);
    EXPECT_EQ(written["cases"], nlohmann::json(r.summary)["cases"]);
    EXPECT_EQ(written["config"]["repetitions"], 2);
}

TEST(RunBenchmark, FailedRunDoesNotAffectOthers) {
    const auto out = scratch("isolation");
    auto config = tiny_config(out, 4, {OptimizerId::LBFGS, OptimizerId::Adam});
    config.optimizers[1].learning_rate = 1e300;
    const auto r = run_benchmark(config);
    const auto alone = run_benchmark(tiny_config(scratch("isolation_alone"), 4, {OptimizerId::LBFGS}));
    EXPECT_EQ(r.traces[1].termination, Termination::NumericalFailure);
    ASSERT_EQ(r.traces[0].records.size(), alone.traces[0].records.size());
    for (std::size_t k = 0; k < alone.traces[0].records.size(); ++k)
        EXPECT_EQ(r.traces[0].records[k].cost, alone.traces[0].records[k].cost);
}
