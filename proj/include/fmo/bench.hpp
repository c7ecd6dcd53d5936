#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fmo/error.hpp"
#include "fmo/objective.hpp"
#include "fmo/optimizers.hpp"
#include "fmo/phantom.hpp"
#include "fmo/problem.hpp"

namespace fmo {

/// Environment variable that caps the number of (case, optimizer) pairs run
/// concurrently. Unset or invalid means one worker per hardware thread.
inline constexpr const char* kBenchJobsEnv = "FMO_BENCH_JOBS";

struct BenchmarkConfig {
    std::vector<std::string> cases;
    std::vector<OptimizerConfig> optimizers;
    std::string output_directory = "bench_out";
    int repetitions = 3;
    bool cache_matrices = true;
    ProblemSettings problem{};

    void validate() const {
        if (cases.empty()) throw ConfigError("field 'cases': must list at least one case");
        if (optimizers.empty()) throw ConfigError("field 'optimizers': must list at least one optimizer");
        if (repetitions < 1) throw ConfigError("field 'repetitions': must be >= 1");
        if (output_directory.empty()) throw ConfigError("field 'output_directory': must not be empty");
        std::set<std::string> seen_cases;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            if (!is_known_case(cases[i]))
                throw ConfigError("field 'cases[" + std::to_string(i) + "]': unknown case '" + cases[i] + "'");
            if (!seen_cases.insert(cases[i]).second)
                throw ConfigError("field 'cases[" + std::to_string(i) + "]': duplicate case '" + cases[i] + "'");
        }
        std::set<OptimizerId> seen;
        for (std::size_t i = 0; i < optimizers.size(); ++i) {
            const std::string field = "field 'optimizers[" + std::to_string(i) + "]'";
            try {
                optimizers[i].validate();
            } catch (const ConfigError& e) {
                throw ConfigError(field + ": " + e.what());
            }
            if (!seen.insert(optimizers[i].id).second)
                throw ConfigError(field + ": duplicate optimizer '" + std::string(to_string(optimizers[i].id)) + "'");
        }
        try {
            problem.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("field 'problem': ") + e.what());
        }
    }
};

/// Parses a benchmark config; every error names the offending field.
inline BenchmarkConfig parse_benchmark_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("benchmark config must be a JSON object");
    static const std::set<std::string> known{"cases", "optimizers", "output_directory", "repetitions", "cache_matrices",
                                             "problem"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("field '" + key + "': unknown field");

    BenchmarkConfig c;
    auto field = [&](const char* name, auto&& fn) {
        if (!j.contains(name)) return;
        try {
            fn(j.at(name));
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            if (msg.rfind("field '", 0) == 0) throw;
            throw ConfigError(std::string("field '") + name + "': " + msg);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("field '") + name + "': " + e.what());
        }
    };
    if (!j.contains("cases")) throw ConfigError("field 'cases': missing");
    if (!j.contains("optimizers")) throw ConfigError("field 'optimizers': missing");
    field("cases", [&](const nlohmann::json& v) {
        if (!v.is_array()) throw ConfigError("must be an array of case names");
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_string()) throw ConfigError("field 'cases[" + std::to_string(i) + "]': must be a string");
            c.cases.push_back(v[i].get<std::string>());
        }
    });
    field("optimizers", [&](const nlohmann::json& v) {
        if (!v.is_array()) throw ConfigError("must be an array of optimizer names or objects");
        for (std::size_t i = 0; i < v.size(); ++i) {
            try {
                c.optimizers.push_back(v[i].get<OptimizerConfig>());
            } catch (const std::exception& e) {
                throw ConfigError("field 'optimizers[" + std::to_string(i) + "]': " + e.what());
            }
        }
    });
    field("output_directory", [&](const nlohmann::json& v) { c.output_directory = v.get<std::string>(); });
    field("repetitions", [&](const nlohmann::json& v) {
        if (!v.is_number_integer()) throw ConfigError("must be an integer");
        c.repetitions = v.get<int>();
    });
    field("cache_matrices", [&](const nlohmann::json& v) { c.cache_matrices = v.get<bool>(); });
    field("problem", [&](const nlohmann::json& v) { c.problem = v.get<ProblemSettings>(); });
    c.validate();
    return c;
}

inline BenchmarkConfig load_benchmark_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_benchmark_config(j);
}

inline void to_json(nlohmann::json& j, const BenchmarkConfig& c) {
    j = {{"cases", c.cases},
         {"optimizers", c.optimizers},
         {"output_directory", c.output_directory},
         {"repetitions", c.repetitions},
         {"cache_matrices", c.cache_matrices},
         {"problem", c.problem}};
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

struct RunSummary {
    std::string case_name;
    OptimizerId optimizer = OptimizerId::LBFGS;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    int iterations = 0;
    std::optional<int> iterations_to_threshold; // empty when unreached
    std::optional<double> time_to_threshold;
    double mean_iteration_seconds = 0.0;
    Termination termination = Termination::MaxIterations;
    std::string message;
    long function_evals = 0;
    long hessian_vector_products = 0;
};

struct CaseSummary {
    std::string case_name;
    double best_final_cost = 0.0;
    double threshold = 0.0;
    std::vector<RunSummary> runs;

    const RunSummary* find(OptimizerId id) const {
        for (const auto& r : runs)
            if (r.optimizer == id) return &r;
        return nullptr;
    }
};

struct BenchmarkSummary {
    double threshold_factor = 1.01;
    std::vector<CaseSummary> cases;

    const CaseSummary* find(std::string_view name) const {
        for (const auto& c : cases)
            if (c.case_name == name) return &c;
        return nullptr;
    }
};

/// Groups traces by case (in first-seen order) and measures each against
/// `threshold_factor` times the lowest finite final cost of its case.
inline BenchmarkSummary summarize(const std::vector<ConvergenceTrace>& traces, double threshold_factor = 1.01) {
    BenchmarkSummary out;
    out.threshold_factor = threshold_factor;
    std::map<std::string, std::size_t> index;
    for (const auto& t : traces) {
        if (t.records.empty()) throw ConfigError("trace for " + t.case_name + "/" + std::string(to_string(t.optimizer)) + " has no records");
        auto [it, inserted] = index.emplace(t.case_name, out.cases.size());
        if (inserted) {
            out.cases.push_back({t.case_name, std::numeric_limits<double>::infinity(), 0.0, {}});
        }
        auto& c = out.cases[it->second];
        const double final_cost = t.records.back().cost;
        if (std::isfinite(final_cost)) c.best_final_cost = std::min(c.best_final_cost, final_cost);
    }
    for (auto& c : out.cases) c.threshold = threshold_factor * c.best_final_cost;

    for (const auto& t : traces) {
        auto& c = out.cases[index.at(t.case_name)];
        RunSummary r;
        r.case_name = t.case_name;
        r.optimizer = t.optimizer;
        r.initial_cost = t.records.front().cost;
        r.final_cost = t.records.back().cost;
        r.iterations = t.records.back().iteration;
        for (const auto& rec : t.records)
            if (rec.cost <= c.threshold) {
                r.iterations_to_threshold = rec.iteration;
                r.time_to_threshold = rec.elapsed;
                break;
            }
        r.mean_iteration_seconds = r.iterations > 0 ? t.records.back().elapsed / r.iterations : 0.0;
        r.termination = t.termination;
        r.message = t.message;
        r.function_evals = t.records.back().function_evals;
        r.hessian_vector_products = t.hessian_vector_products;
        c.runs.push_back(std::move(r));
    }
    return out;
}

inline void to_json(nlohmann::json& j, const RunSummary& r) {
    j = {{"optimizer", std::string(to_string(r.optimizer))},
         {"initial_cost", r.initial_cost},
         {"final_cost", r.final_cost},
         {"iterations", r.iterations},
         {"threshold_reached", r.iterations_to_threshold.has_value()},
         {"iterations_to_threshold", r.iterations_to_threshold ? nlohmann::json(*r.iterations_to_threshold) : nlohmann::json()},
         {"time_to_threshold_seconds", r.time_to_threshold ? nlohmann::json(*r.time_to_threshold) : nlohmann::json()},
         {"mean_iteration_seconds", r.mean_iteration_seconds},
         {"termination", std::string(to_string(r.termination))},
         {"message", r.message},
         {"function_evals", r.function_evals},
         {"hessian_vector_products", r.hessian_vector_products}};
}

inline void to_json(nlohmann::json& j, const BenchmarkSummary& s) {
    j = nlohmann::json::object();
    j["threshold_factor"] = s.threshold_factor;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : s.cases)
        j["cases"].push_back({{"case", c.case_name},
                              {"best_final_cost", c.best_final_cost},
                              {"threshold_cost", c.threshold},
                              {"runs", c.runs}});
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

inline std::string trace_stem(std::string_view case_name, OptimizerId id) {
    return std::string(case_name) + "__" + std::string(to_string(id));
}

/// CSV with columns iteration,cost,gradient_norm,elapsed_seconds,function_evals.
inline void write_trace_csv(std::ostream& os, const ConvergenceTrace& t) {
    os << "iteration,cost,gradient_norm,elapsed_seconds,function_evals\n";
    os.precision(17);
    for (const auto& r : t.records)
        os << r.iteration << ',' << r.cost << ',' << r.gradient_norm << ',' << r.elapsed << ',' << r.function_evals << '\n';
}

inline std::vector<IterationRecord> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "iteration,cost,gradient_norm,elapsed_seconds,function_evals")
        throw ConfigError("trace CSV has an unexpected header");
    std::vector<IterationRecord> out;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        const std::string where = "trace CSV line " + std::to_string(line_no);
        if (f.size() != 5) throw ConfigError(where + " has " + std::to_string(f.size()) + " fields, expected 5");
        IterationRecord r;
        try {
            r.iteration = std::stoi(f[0]);
            r.cost = std::stod(f[1]);
            r.gradient_norm = std::stod(f[2]);
            r.elapsed = std::stod(f[3]);
            r.function_evals = std::stol(f[4]);
        } catch (const std::exception&) {
            throw ConfigError(where + " is malformed");
        }
        if (!out.empty() && r.iteration <= out.back().iteration) throw ConfigError(where + ": iterations must increase");
        out.push_back(r);
    }
    if (out.empty()) throw ConfigError("trace CSV has no records");
    return out;
}

/// Final fluence written next to each trace so doses can be recomputed.
inline std::filesystem::path fluence_path_for(const std::filesystem::path& trace_csv) {
    auto p = trace_csv;
    p.replace_extension(".fluence.csv");
    return p;
}

inline void write_fluence_csv(std::ostream& os, const Vector& b) {
    os << "bixel,fluence\n";
    os.precision(17);
    for (Eigen::Index i = 0; i < b.size(); ++i) os << i << ',' << b[i] << '\n';
}

inline Vector read_fluence_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "bixel,fluence") throw ConfigError("fluence CSV has an unexpected header");
    std::vector<double> values;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("fluence CSV line is malformed: " + line);
        try {
            if (std::stoul(line.substr(0, comma)) != values.size())
                throw ConfigError("fluence CSV rows are not in bixel order");
            values.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::invalid_argument&) {
            throw ConfigError("fluence CSV line is malformed: " + line);
        }
    }
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct BenchmarkResult {
    std::vector<ConvergenceTrace> traces; // case-major, optimizers in config order
    BenchmarkSummary summary;
};

inline unsigned benchmark_jobs() {
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv(kBenchJobsEnv)) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) jobs = static_cast<unsigned>(v);
    }
    return jobs;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string matrix_cache_path(const BenchmarkConfig& config, std::string_view case_name) {
    std::ostringstream name;
    name << case_name << '_' << std::hex << fnv1a(nlohmann::json(config.problem).dump()) << ".bin";
    return (std::filesystem::path(config.output_directory) / "cache" / name.str()).string();
}

} // namespace detail

/// Runs every (case, optimizer) pair `repetitions` times, writes
/// traces/<case>__<optimizer>.csv (+ .fluence.csv) and summary.json under
/// the output directory. Elapsed times are averaged over repetitions; costs
/// come from the first repetition.
inline BenchmarkResult run_benchmark(const BenchmarkConfig& config, std::ostream* log = nullptr) {
    config.validate();
    namespace fs = std::filesystem;
    const fs::path out_dir(config.output_directory);
    const fs::path trace_dir = out_dir / "traces";
    fs::create_directories(trace_dir);

    std::mutex log_mutex;
    auto say = [&](const std::string& msg) {
        if (!log) return;
        std::lock_guard lock(log_mutex);
        *log << msg << '\n';
    };

    BenchmarkResult result;
    result.traces.resize(config.cases.size() * config.optimizers.size());
    for (std::size_t ci = 0; ci < config.cases.size(); ++ci) {
        const auto& case_name = config.cases[ci];
        say("building " + case_name);
        const Problem problem =
            build_problem(case_name, config.problem, config.cache_matrices ? detail::matrix_cache_path(config, case_name) : "");
        const FluenceObjective objective(problem.matrix, problem.spec, problem.phantom);
        const Vector b0 = standard_initialization(problem.matrix, problem.phantom, problem.spec);

        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&]() {
            for (std::size_t oi = next++; oi < config.optimizers.size(); oi = next++) try {
                const auto& opt = config.optimizers[oi];
                ConvergenceTrace trace;
                std::vector<double> elapsed_sum;
                for (int rep = 0; rep < config.repetitions; ++rep) {
                    ConvergenceTrace t;
                    try {
                        t = run(objective, b0, opt, case_name);
                    } catch (const std::exception& e) {
                        t = ConvergenceTrace{opt.id, case_name, {}, b0, Termination::NumericalFailure, e.what(), 0};
                        t.records.push_back({0, std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0, 0});
                    }
                    if (rep == 0) {
                        trace = std::move(t);
                        elapsed_sum.assign(trace.records.size(), 0.0);
                        for (std::size_t k = 0; k < trace.records.size(); ++k) elapsed_sum[k] = trace.records[k].elapsed;
                    } else {
                        for (std::size_t k = 0; k < std::min(t.records.size(), elapsed_sum.size()); ++k)
                            elapsed_sum[k] += t.records[k].elapsed;
                    }
                }
                for (std::size_t k = 0; k < trace.records.size(); ++k)
                    trace.records[k].elapsed = elapsed_sum[k] / config.repetitions;

                const fs::path csv = trace_dir / (trace_stem(case_name, opt.id) + ".csv");
                {
                    std::ofstream os(csv);
                    write_trace_csv(os, trace);
                    if (!os) throw ConfigError("failed writing '" + csv.string() + "'");
                }
                {
                    std::ofstream os(fluence_path_for(csv));
                    write_fluence_csv(os, trace.final_b);
                }
                std::ostringstream msg;
                msg.precision(6);
                msg << case_name << ' ' << to_string(opt.id) << ": " << trace.records.back().iteration
                    << " iterations, final cost " << trace.records.back().cost << ", " << to_string(trace.termination);
                say(msg.str());
                result.traces[ci * config.optimizers.size() + oi] = std::move(trace);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        };
        const unsigned jobs = std::min<unsigned>(benchmark_jobs(), static_cast<unsigned>(config.optimizers.size()));
        std::vector<std::thread> pool;
        for (unsigned k = 1; k < jobs; ++k) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    result.summary = summarize(result.traces);
    nlohmann::json j = result.summary;
    j["config"] = config;
    std::ofstream os(out_dir / "summary.json");
    os << j.dump(2) << '\n';
    return result;
}

} // namespace fmo
