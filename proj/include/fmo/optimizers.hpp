#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fmo/error.hpp"
#include "fmo/influence_matrix.hpp"
#include "fmo/line_search.hpp"

namespace fmo {

enum class OptimizerId {
    GD,
    CG,
    NewtonCG,
    BFGS,
    LBFGS,
    Adam,
    RAdam,
    NAdam,
    Adadelta,
    Adamax,
    RMSprop,
    Rprop,
    AdamW,
    Adagrad,
    ASGD,
};

inline constexpr std::array<OptimizerId, 15> kAllOptimizers{
    OptimizerId::GD,      OptimizerId::CG,     OptimizerId::NewtonCG, OptimizerId::BFGS,    OptimizerId::LBFGS,
    OptimizerId::Adam,    OptimizerId::RAdam,  OptimizerId::NAdam,    OptimizerId::Adadelta, OptimizerId::Adamax,
    OptimizerId::RMSprop, OptimizerId::Rprop,  OptimizerId::AdamW,    OptimizerId::Adagrad, OptimizerId::ASGD,
};

/// The twelve methods reported in the headline comparison (the three family
/// variants AdamW, Adagrad and ASGD are left out).
inline constexpr std::array<OptimizerId, 12> kHeadlineOptimizers{
    OptimizerId::GD,       OptimizerId::CG,     OptimizerId::NewtonCG, OptimizerId::BFGS,
    OptimizerId::LBFGS,    OptimizerId::Adam,   OptimizerId::RAdam,    OptimizerId::NAdam,
    OptimizerId::Adadelta, OptimizerId::Adamax, OptimizerId::RMSprop,  OptimizerId::Rprop,
};

inline std::string_view to_string(OptimizerId id) {
    switch (id) {
    case OptimizerId::GD: return "GD";
    case OptimizerId::CG: return "CG";
    case OptimizerId::NewtonCG: return "NewtonCG";
    case OptimizerId::BFGS: return "BFGS";
    case OptimizerId::LBFGS: return "LBFGS";
    case OptimizerId::Adam: return "Adam";
    case OptimizerId::RAdam: return "RAdam";
    case OptimizerId::NAdam: return "NAdam";
    case OptimizerId::Adadelta: return "Adadelta";
    case OptimizerId::Adamax: return "Adamax";
    case OptimizerId::RMSprop: return "RMSprop";
    case OptimizerId::Rprop: return "Rprop";
    case OptimizerId::AdamW: return "AdamW";
    case OptimizerId::Adagrad: return "Adagrad";
    case OptimizerId::ASGD: return "ASGD";
    }
    return "?";
}

inline OptimizerId parse_optimizer_id(std::string_view name) {
    for (auto id : kAllOptimizers)
        if (to_string(id) == name) return id;
    throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

/// Methods whose every accepted step passes a sufficient-decrease test.
constexpr bool uses_line_search(OptimizerId id) {
    return id == OptimizerId::GD || id == OptimizerId::CG || id == OptimizerId::NewtonCG || id == OptimizerId::BFGS ||
           id == OptimizerId::LBFGS;
}

struct OptimizerConfig {
    OptimizerId id = OptimizerId::LBFGS;
    double learning_rate = 0.5; // fixed-step methods; ASGD calibrates when <= 0
    int max_iterations = 200;
    double gradient_tolerance = 1e-6; // on |g| / max(1, |g0|)
    int lbfgs_memory = 10;
    LineSearchParams line_search{};

    // Adam family
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0; // AdamW (decoupled) and ASGD (L2)
    // Adadelta
    double rho = 0.9;
    // RMSprop
    double rms_decay = 0.99;
    // Rprop
    double rprop_eta_plus = 1.2;
    double rprop_eta_minus = 0.5;
    double rprop_step_min = 1e-6;
    double rprop_step_max = 50.0;
    double rprop_step_init = 0.1;
    // ASGD
    double asgd_lambda = 1e-4;
    double asgd_alpha = 0.75;
    double asgd_t0 = 1e6;
    // Newton-CG
    int newton_max_inner = 500;
    double newton_forcing = 0.1; // inner tolerance = min(newton_forcing, sqrt(relative gradient norm))
    // The objective is even in every coordinate (it sees only |b|). NewtonCG,
    // BFGS and LBFGS then keep each coordinate on its side of zero: a step that
    // would cross is cut to sign_shrink times the old value, and coordinates
    // cut on the previous step that still point toward zero leave the model.
    bool sign_symmetric = true;
    double sign_shrink = 0.01;

    std::uint64_t seed = 0; // none of the shipped methods draws random numbers; kept for reproducible configs

    /// Per-method defaults.
    static OptimizerConfig defaults(OptimizerId id) {
        OptimizerConfig c;
        c.id = id;
        c.max_iterations = uses_line_search(id) ? 200 : 2000;
        switch (id) {
        case OptimizerId::CG: c.line_search.c2 = 0.1; break;
        case OptimizerId::Adadelta:
            c.learning_rate = 1.0;
            c.epsilon = 1e-6;
            break;
        case OptimizerId::Adagrad: c.epsilon = 1e-10; break;
        case OptimizerId::AdamW: c.weight_decay = 1e-4; break;
        case OptimizerId::ASGD: c.learning_rate = 0.0; break;
        default: break;
        }
        return c;
    }

    void validate() const {
        line_search.validate();
        if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
        if (lbfgs_memory < 1) throw ConfigError("lbfgs_memory must be >= 1");
        if (!(gradient_tolerance >= 0.0)) throw ConfigError("gradient_tolerance must be >= 0");
        if (id != OptimizerId::ASGD && !uses_line_search(id) && id != OptimizerId::Rprop && !(learning_rate > 0.0))
            throw ConfigError("learning_rate must be positive for " + std::string(to_string(id)));
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
        if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
        if (!(rprop_eta_plus > 1.0 && rprop_eta_minus > 0.0 && rprop_eta_minus < 1.0))
            throw ConfigError("Rprop needs eta_plus > 1 and 0 < eta_minus < 1");
        if (!(rprop_step_min > 0.0 && rprop_step_min <= rprop_step_init && rprop_step_init <= rprop_step_max))
            throw ConfigError("Rprop needs 0 < step_min <= step_init <= step_max");
        if (newton_max_inner < 1) throw ConfigError("newton_max_inner must be >= 1");
        if (!(sign_shrink >= 0.0 && sign_shrink < 1.0)) throw ConfigError("sign_shrink must be in [0, 1)");
    }
};

struct IterationRecord {
    int iteration = 0;
    double cost = 0.0;
    double gradient_norm = 0.0;
    double elapsed = 0.0; // seconds since the run started
    long function_evals = 0;
};

enum class Termination { Converged, MaxIterations, LineSearchFailure, NumericalFailure };

inline std::string_view to_string(Termination t) {
    switch (t) {
    case Termination::Converged: return "Converged";
    case Termination::MaxIterations: return "MaxIterations";
    case Termination::LineSearchFailure: return "LineSearchFailure";
    case Termination::NumericalFailure: return "NumericalFailure";
    }
    return "?";
}

inline Termination parse_termination(std::string_view s) {
    for (auto t : {Termination::Converged, Termination::MaxIterations, Termination::LineSearchFailure,
                   Termination::NumericalFailure})
        if (to_string(t) == s) return t;
    throw ConfigError("unknown termination '" + std::string(s) + "'");
}

struct ConvergenceTrace {
    OptimizerId optimizer = OptimizerId::LBFGS;
    std::string case_name;
    std::vector<IterationRecord> records; // record 0 is the starting point
    Vector final_b;
    Termination termination = Termination::MaxIterations;
    std::string message;
    long hessian_vector_products = 0;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

struct CurvaturePair {
    Vector s;
    Vector y;
    double rho = 0.0; // 1 / <s, y>
};

/// Accepts (s, y) only when <s, y> > 1e-10 |s| |y|.
inline std::optional<CurvaturePair> make_curvature_pair(Vector s, Vector y) {
    const double sy = s.dot(y);
    if (!(sy > 1e-10 * s.norm() * y.norm())) return std::nullopt;
    return CurvaturePair{std::move(s), std::move(y), 1.0 / sy};
}

/// L-BFGS two-loop recursion: returns -H g for the inverse-Hessian
/// approximation built from `history` (oldest first), with initial scaling
/// <s, y> / <y, y> of the newest pair (1 when empty).
inline Vector lbfgs_two_loop(const Vector& gradient, std::span<const CurvaturePair> history) {
    Vector q = gradient;
    std::vector<double> alpha(history.size());
    for (std::size_t i = history.size(); i-- > 0;) {
        alpha[i] = history[i].rho * history[i].s.dot(q);
        q -= alpha[i] * history[i].y;
    }
    double gamma = 1.0;
    if (!history.empty()) {
        const auto& last = history.back();
        gamma = 1.0 / (last.rho * last.y.squaredNorm());
    }
    Vector r = gamma * q;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const double beta = history[i].rho * history[i].y.dot(r);
        r += (alpha[i] - beta) * history[i].s;
    }
    return -r;
}

struct NewtonDirection {
    Vector direction;
    int inner_iterations = 0;
    bool negative_curvature = false;
};

/// Truncated linear conjugate gradient on H p = -g. Stops when |r| <= tol |g|
/// or after max_inner steps. On non-positive curvature it returns the current
/// iterate, or -g if that happens on the first step.
template <typename Hvp>
NewtonDirection newton_inner_solve(Hvp&& hvp, const Vector& g, double tol, int max_inner) {
    NewtonDirection out{Vector::Zero(g.size()), 0, false};
    const double g_norm = g.norm();
    if (g_norm == 0.0) return out;
    Vector r = -g;
    Vector d = r;
    double rr = r.squaredNorm();
    for (int k = 0; k < max_inner; ++k) {
        const Vector Hd = hvp(d);
        const double curvature = d.dot(Hd);
        ++out.inner_iterations;
        if (!(curvature > 1e-14 * d.squaredNorm())) {
            out.negative_curvature = true;
            if (k == 0) out.direction = -g;
            return out;
        }
        const double a = rr / curvature;
        out.direction += a * d;
        r -= a * Hd;
        const double rr_new = r.squaredNorm();
        if (std::sqrt(rr_new) <= tol * g_norm) break;
        d = r + (rr_new / rr) * d;
        rr = rr_new;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

namespace detail {

template <SmoothObjective F>
class Counted {
public:
    explicit Counted(const F& f) : f_(f) {}
    std::size_t dimension() const { return f_.dimension(); }
    double value(const Vector& x) const {
        ++evals;
        return f_.value(x);
    }
    double value_and_gradient(const Vector& x, Vector& g) const {
        ++evals;
        return f_.value_and_gradient(x, g);
    }
    Vector hessian_vector_product(const Vector& x, const Vector& v) const
        requires HessianVectorObjective<F>
    {
        ++hvps;
        return f_.hessian_vector_product(x, v);
    }

    mutable long evals = 0;
    mutable long hvps = 0;

private:
    const F& f_;
};

struct State {
    Vector x;
    double f = 0.0;
    Vector g;
};

enum class StepStatus { Ok, LineSearchFailure };

inline bool finite(const Vector& v) { return v.allFinite(); }

/// Point reached by moving `step * p` from x while keeping every coordinate in
/// its current orthant: a component that would change sign is scaled by
/// `shrink` instead.
inline Vector sign_preserving_point(const Vector& x, const Vector& p, double step, double shrink) {
    Vector y = x + step * p;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if ((x[i] > 0.0 && y[i] <= 0.0) || (x[i] < 0.0 && y[i] >= 0.0)) y[i] = shrink * x[i];
    return y;
}

/// Backtracking along the sign-preserving path with the Armijo test applied
/// to the actual displacement.
template <SmoothObjective F>
LineSearchResult sign_preserving_backtracking(const F& f, const Vector& x, const Vector& p, double f0,
                                              const Vector& g0, double c1, int max_evals, double shrink) {
    LineSearchResult r{false, 0.0, x, f0, g0, 0};
    double a = 1.0;
    while (r.evals < max_evals) {
        Vector xa = sign_preserving_point(x, p, a, shrink);
        const double slope = g0.dot(xa - x);
        if (slope < 0.0) {
            Vector ga;
            const double fa = f.value_and_gradient(xa, ga);
            ++r.evals;
            if (std::isfinite(fa) && fa <= f0 + c1 * slope) {
                r.converged = true;
                r.step = a;
                r.x = std::move(xa);
                r.f = fa;
                r.g = std::move(ga);
                return r;
            }
        }
        a *= 0.5;
        if (a < 1e-20) break;
    }
    return r;
}

} // namespace detail

/// Runs one optimizer from b0 until the relative gradient norm drops below
/// the tolerance, the iteration budget is spent, a line search fails, or the
/// cost/gradient stops being finite. Deterministic for a given (b0, config).
template <SmoothObjective F>
ConvergenceTrace run(const F& objective, const Vector& b0, const OptimizerConfig& config, std::string case_name = {}) {
    using Clock = std::chrono::steady_clock;
    config.validate();
    if (static_cast<std::size_t>(b0.size()) != objective.dimension())
        throw DimensionError("initial point has length " + std::to_string(b0.size()) + ", objective expects " +
                             std::to_string(objective.dimension()));
    if (!b0.allFinite()) throw ConfigError("initial point has non-finite entries");
    if constexpr (!HessianVectorObjective<F>) {
        if (config.id == OptimizerId::NewtonCG)
            throw ConfigError("NewtonCG requires an objective with Hessian-vector products");
    }

    const detail::Counted<F> f(objective);
    ConvergenceTrace trace;
    trace.optimizer = config.id;
    trace.case_name = std::move(case_name);

    const auto start = Clock::now();
    detail::State s{b0, 0.0, {}};
    s.f = f.value_and_gradient(s.x, s.g);
    const double g0_scale = std::max(1.0, s.g.norm());
    auto record = [&](int it) {
        trace.records.push_back({it, s.f, s.g.norm(), std::chrono::duration<double>(Clock::now() - start).count(), f.evals});
    };
    record(0);
    auto finish = [&](Termination t, std::string msg = {}) {
        trace.termination = t;
        trace.message = std::move(msg);
        trace.final_b = s.x;
        trace.hessian_vector_products = f.hvps;
        return trace;
    };
    if (!std::isfinite(s.f) || !detail::finite(s.g)) return finish(Termination::NumericalFailure, "non-finite cost or gradient at b0");
    if (s.g.norm() / g0_scale <= config.gradient_tolerance) return finish(Termination::Converged);

    const auto n = static_cast<Eigen::Index>(b0.size());
    const OptimizerId id = config.id;
    const auto& ls = config.line_search;

    // Method state; only the members used by `id` are touched.
    Vector m = Vector::Zero(n), v = Vector::Zero(n), aux = Vector::Zero(n), prev_g = Vector::Zero(n);
    Vector direction;
    double step_memory = 0.0, nadam_mu_product = 1.0;
    std::deque<CurvaturePair> history;
    Eigen::MatrixXd H;
    bool H_initialized = false;
    int cg_since_restart = 0;
    if (id == OptimizerId::Rprop) aux.setConstant(config.rprop_step_init);
    if (id == OptimizerId::ASGD) aux = s.x; // running average
    if (id == OptimizerId::BFGS) H = Eigen::MatrixXd::Identity(n, n);
    double asgd_lr = config.learning_rate;

    auto take = [&](LineSearchResult&& r) {
        s.x = std::move(r.x);
        s.f = r.f;
        s.g = std::move(r.g);
    };
    // Strong Wolfe search with one steepest-descent retry; on failure keeps
    // the best sufficient-decrease point found, if any.
    auto wolfe = [&](const Vector& p, double a0, double* accepted_step = nullptr) {
        auto r = wolfe_line_search(f, s.x, p, s.f, s.g, ls, a0);
        if (!r.converged && r.f >= s.f) {
            const Vector sd = -s.g;
            r = wolfe_line_search(f, s.x, sd, s.f, s.g, ls, 1.0 / std::max(1.0, s.g.norm()));
        }
        if (r.f < s.f) {
            if (accepted_step) *accepted_step = r.step;
            take(std::move(r));
            return detail::StepStatus::Ok;
        }
        return detail::StepStatus::LineSearchFailure;
    };
    auto first_step = [&]() { return 1.0 / std::max(1.0, s.g.norm()); };

    // Sign-symmetric mode: 1 marks a coordinate cut at zero by the previous step.
    Vector clipped = Vector::Zero(n);
    auto free_mask = [&]() {
        Vector free = Vector::Ones(n);
        if (config.sign_symmetric)
            for (Eigen::Index i = 0; i < n; ++i)
                if (clipped[i] != 0.0 && s.g[i] * s.x[i] > 0.0) free[i] = 0.0;
        return free;
    };
    // Steps along a model direction computed on the free coordinates. Returns
    // false when the caller should drop its curvature memory.
    auto model_step = [&](Vector p, const Vector& free, double a0, detail::StepStatus& status) {
        if (!config.sign_symmetric) {
            if (!(p.dot(s.g) < 0.0)) {
                status = wolfe(-s.g, first_step());
                return false;
            }
            status = wolfe(p, a0);
            return true;
        }
        for (Eigen::Index i = 0; i < n; ++i)
            if (free[i] == 0.0) p[i] = (config.sign_shrink - 1.0) * s.x[i];
        bool keep = true;
        if (!(p.dot(s.g) < 0.0)) {
            p = -first_step() * s.g;
            keep = false;
        } else {
            p *= a0;
        }
        auto r = detail::sign_preserving_backtracking(f, s.x, p, s.f, s.g, ls.c1, ls.max_evals, config.sign_shrink);
        if (!r.converged) {
            clipped.setZero();
            status = wolfe(-s.g, first_step());
            return false;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const double y = s.x[i] + r.step * p[i];
            clipped[i] = (free[i] == 0.0 || (s.x[i] > 0.0 && y <= 0.0) || (s.x[i] < 0.0 && y >= 0.0)) ? 1.0 : 0.0;
        }
        take(std::move(r));
        return keep;
    };

    for (int it = 1; it <= config.max_iterations; ++it) {
        detail::StepStatus status = detail::StepStatus::Ok;
        const double t = it;
        switch (id) {
        case OptimizerId::GD: {
            const double a0 = step_memory > 0.0 ? 2.0 * step_memory : first_step();
            auto r = armijo_backtracking(f, s.x, -s.g, s.f, s.g, ls.c1, ls.max_evals, a0);
            if (!r.converged) {
                status = detail::StepStatus::LineSearchFailure;
                break;
            }
            step_memory = r.step;
            take(std::move(r));
            break;
        }
        case OptimizerId::CG: {
            if (it == 1 || cg_since_restart >= n) {
                direction = -s.g;
                cg_since_restart = 0;
            } else {
                const double beta = std::max(0.0, s.g.dot(s.g - prev_g) / prev_g.squaredNorm());
                direction = -s.g + beta * direction;
                if (direction.dot(s.g) >= 0.0) {
                    direction = -s.g;
                    cg_since_restart = 0;
                }
            }
            // Initial step from the previous iteration's first-order change.
            double a0 = first_step();
            if (it > 1 && step_memory < 0.0) a0 = std::min(1.0, 1.01 * step_memory / direction.dot(s.g));
            if (!(a0 > 0.0)) a0 = first_step();
            prev_g = s.g;
            const double f_before = s.f;
            double a = 0.0;
            status = wolfe(direction, a0, &a);
            // step_memory stores 2 (f_k - f_{k-1}) for the next initial guess, as a negative number.
            step_memory = 2.0 * (s.f - f_before);
            ++cg_since_restart;
            break;
        }
        case OptimizerId::NewtonCG: {
            if constexpr (HessianVectorObjective<F>) {
                const Vector free = free_mask();
                const double tol = std::min(config.newton_forcing, std::sqrt(s.g.norm() / g0_scale));
                const Vector x = s.x;
                auto nd = newton_inner_solve(
                    [&](const Vector& d) { return Vector(f.hessian_vector_product(x, d.cwiseProduct(free)).cwiseProduct(free)); },
                    s.g.cwiseProduct(free), tol, config.newton_max_inner);
                model_step(std::move(nd.direction), free, 1.0, status);
            }
            break;
        }
        case OptimizerId::BFGS: {
            const Vector free = free_mask();
            const Vector x_old = s.x, g_old = s.g;
            const Vector p = -(H * s.g.cwiseProduct(free)).cwiseProduct(free);
            if (!model_step(p, free, H_initialized ? 1.0 : first_step(), status)) {
                H.setIdentity();
                H_initialized = false;
            }
            if (status != detail::StepStatus::Ok) break;
            if (auto pair = make_curvature_pair(s.x - x_old, s.g - g_old)) {
                const Vector& sv = pair->s;
                const Vector& yv = pair->y;
                if (!H_initialized) {
                    H *= 1.0 / (pair->rho * yv.squaredNorm());
                    H_initialized = true;
                }
                const Vector Hy = H * yv;
                const double rho = pair->rho;
                const double yHy = yv.dot(Hy);
                H.noalias() -= rho * (Hy * sv.transpose() + sv * Hy.transpose());
                H.noalias() += (rho * rho * yHy + rho) * (sv * sv.transpose());
            }
            break;
        }
        case OptimizerId::LBFGS: {
            const Vector free = free_mask();
            const Vector x_old = s.x, g_old = s.g;
            std::vector<CurvaturePair> hist(history.begin(), history.end());
            const Vector p = lbfgs_two_loop(s.g.cwiseProduct(free), hist).cwiseProduct(free);
            if (!model_step(p, free, history.empty() ? first_step() : 1.0, status)) history.clear();
            if (status != detail::StepStatus::Ok) break;
            if (auto pair = make_curvature_pair(s.x - x_old, s.g - g_old)) {
                history.push_back(std::move(*pair));
                while (static_cast<int>(history.size()) > config.lbfgs_memory) history.pop_front();
            }
            break;
        }
        case OptimizerId::Adam:
        case OptimizerId::AdamW: {
            if (id == OptimizerId::AdamW) s.x *= 1.0 - config.learning_rate * config.weight_decay;
            m = config.beta1 * m + (1.0 - config.beta1) * s.g;
            v = config.beta2 * v + (1.0 - config.beta2) * s.g.cwiseAbs2();
            const double bc1 = 1.0 - std::pow(config.beta1, t), bc2 = 1.0 - std::pow(config.beta2, t);
            s.x.array() -= config.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.epsilon);
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        case OptimizerId::RAdam: {
            m = config.beta1 * m + (1.0 - config.beta1) * s.g;
            v = config.beta2 * v + (1.0 - config.beta2) * s.g.cwiseAbs2();
            const double b2t = std::pow(config.beta2, t);
            const double rho_inf = 2.0 / (1.0 - config.beta2) - 1.0;
            const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
            // No update until the variance of the adaptive rate is tractable.
            if (rho_t > 5.0) {
                const double rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                              ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
                const double bc1 = 1.0 - std::pow(config.beta1, t);
                s.x.array() -= config.learning_rate * rect * (m.array() / bc1) /
                               ((v.array() / (1.0 - b2t)).sqrt() + config.epsilon);
                s.f = f.value_and_gradient(s.x, s.g);
            }
            break;
        }
        case OptimizerId::NAdam: {
            constexpr double psi = 0.004;
            const double mu = config.beta1 * (1.0 - 0.5 * std::pow(0.96, t * psi));
            const double mu_next = config.beta1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * psi));
            nadam_mu_product *= mu;
            m = config.beta1 * m + (1.0 - config.beta1) * s.g;
            v = config.beta2 * v + (1.0 - config.beta2) * s.g.cwiseAbs2();
            const auto denom = (v.array() / (1.0 - std::pow(config.beta2, t))).sqrt() + config.epsilon;
            s.x.array() -= config.learning_rate * (1.0 - mu) / (1.0 - nadam_mu_product) * s.g.array() / denom;
            s.x.array() -= config.learning_rate * mu_next / (1.0 - nadam_mu_product * mu_next) * m.array() / denom;
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        case OptimizerId::Adadelta: {
            v = config.rho * v + (1.0 - config.rho) * s.g.cwiseAbs2(); // E[g^2]
            const Vector delta = ((aux.array() + config.epsilon).sqrt() / (v.array() + config.epsilon).sqrt() *
                                  s.g.array()).matrix();
            aux = config.rho * aux + (1.0 - config.rho) * delta.cwiseAbs2(); // E[dx^2]
            s.x -= config.learning_rate * delta;
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        case OptimizerId::Adamax: {
            m = config.beta1 * m + (1.0 - config.beta1) * s.g;
            v = (config.beta2 * v).cwiseMax((s.g.array().abs() + config.epsilon).matrix());
            const double bc1 = 1.0 - std::pow(config.beta1, t);
            s.x.array() -= config.learning_rate / bc1 * m.array() / v.array();
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        case OptimizerId::RMSprop: {
            v = config.rms_decay * v + (1.0 - config.rms_decay) * s.g.cwiseAbs2();
            s.x.array() -= config.learning_rate * s.g.array() / (v.array().sqrt() + config.epsilon);
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        case OptimizerId::Adagrad: {
            v += s.g.cwiseAbs2();
            s.x.array() -= config.learning_rate * s.g.array() / (v.array().sqrt() + config.epsilon);
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        case OptimizerId::Rprop: {
            Vector g = s.g;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double sgn = g[i] * prev_g[i];
                if (sgn > 0.0) aux[i] = std::min(aux[i] * config.rprop_eta_plus, config.rprop_step_max);
                else if (sgn < 0.0) {
                    aux[i] = std::max(aux[i] * config.rprop_eta_minus, config.rprop_step_min);
                    g[i] = 0.0;
                }
                if (g[i] > 0.0) s.x[i] -= aux[i];
                else if (g[i] < 0.0) s.x[i] += aux[i];
            }
            prev_g = g;
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        case OptimizerId::ASGD: {
            if (!(asgd_lr > 0.0)) {
                // Half the first Armijo-acceptable steepest-descent step.
                auto r = armijo_backtracking(f, s.x, -s.g, s.f, s.g, ls.c1, 60, 1e3 / std::max(1.0, s.g.norm()));
                asgd_lr = r.converged ? 0.5 * r.step : 1.0 / std::max(1.0, s.g.norm());
            }
            const double eta = asgd_lr / std::pow(1.0 + config.asgd_lambda * asgd_lr * (t - 1.0), config.asgd_alpha);
            const double mu = 1.0 / std::max(1.0, t - 1.0 - config.asgd_t0);
            s.x *= 1.0 - config.asgd_lambda * eta;
            s.x -= eta * s.g;
            aux += mu * (s.x - aux);
            s.f = f.value_and_gradient(s.x, s.g);
            break;
        }
        }

        if (status == detail::StepStatus::LineSearchFailure) return finish(Termination::LineSearchFailure, "no decrease along the search direction");
        record(it);
        if (!std::isfinite(s.f) || !detail::finite(s.g))
            return finish(Termination::NumericalFailure, "non-finite cost or gradient at iteration " + std::to_string(it));
        if (s.g.norm() / g0_scale <= config.gradient_tolerance) return finish(Termination::Converged);
    }
    return finish(Termination::MaxIterations);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
    j = {{"id", std::string(to_string(c.id))},
         {"learning_rate", c.learning_rate},
         {"max_iterations", c.max_iterations},
         {"gradient_tolerance", c.gradient_tolerance},
         {"lbfgs_memory", c.lbfgs_memory},
         {"line_search", {{"c1", c.line_search.c1}, {"c2", c.line_search.c2}, {"max_evals", c.line_search.max_evals}}},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"epsilon", c.epsilon},
         {"weight_decay", c.weight_decay},
         {"rho", c.rho},
         {"rms_decay", c.rms_decay},
         {"rprop", {{"eta_plus", c.rprop_eta_plus}, {"eta_minus", c.rprop_eta_minus}, {"step_min", c.rprop_step_min},
                    {"step_max", c.rprop_step_max}, {"step_init", c.rprop_step_init}}},
         {"asgd", {{"lambda", c.asgd_lambda}, {"alpha", c.asgd_alpha}, {"t0", c.asgd_t0}}},
         {"newton", {{"max_inner", c.newton_max_inner}, {"forcing", c.newton_forcing}}},
         {"sign_symmetric", c.sign_symmetric},
         {"sign_shrink", c.sign_shrink},
         {"seed", c.seed}};
}

/// Accepts either a bare optimizer name or an object; unspecified fields keep
/// the per-method defaults.
inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
    if (j.is_string()) {
        c = OptimizerConfig::defaults(parse_optimizer_id(j.get<std::string>()));
        return;
    }
    if (!j.is_object() || !j.contains("id")) throw ConfigError("optimizer entry needs an 'id' field: " + j.dump());
    c = OptimizerConfig::defaults(parse_optimizer_id(j.at("id").get<std::string>()));
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.gradient_tolerance = j.value("gradient_tolerance", c.gradient_tolerance);
    c.lbfgs_memory = j.value("lbfgs_memory", c.lbfgs_memory);
    if (j.contains("line_search")) {
        const auto& l = j.at("line_search");
        c.line_search.c1 = l.value("c1", c.line_search.c1);
        c.line_search.c2 = l.value("c2", c.line_search.c2);
        c.line_search.max_evals = l.value("max_evals", c.line_search.max_evals);
    }
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.rho = j.value("rho", c.rho);
    c.rms_decay = j.value("rms_decay", c.rms_decay);
    if (j.contains("rprop")) {
        const auto& r = j.at("rprop");
        c.rprop_eta_plus = r.value("eta_plus", c.rprop_eta_plus);
        c.rprop_eta_minus = r.value("eta_minus", c.rprop_eta_minus);
        c.rprop_step_min = r.value("step_min", c.rprop_step_min);
        c.rprop_step_max = r.value("step_max", c.rprop_step_max);
        c.rprop_step_init = r.value("step_init", c.rprop_step_init);
    }
    if (j.contains("asgd")) {
        const auto& a = j.at("asgd");
        c.asgd_lambda = a.value("lambda", c.asgd_lambda);
        c.asgd_alpha = a.value("alpha", c.asgd_alpha);
        c.asgd_t0 = a.value("t0", c.asgd_t0);
    }
    if (j.contains("newton")) {
        const auto& nw = j.at("newton");
        c.newton_max_inner = nw.value("max_inner", c.newton_max_inner);
        c.newton_forcing = nw.value("forcing", c.newton_forcing);
    }
    c.sign_symmetric = j.value("sign_symmetric", c.sign_symmetric);
    c.sign_shrink = j.value("sign_shrink", c.sign_shrink);
    c.seed = j.value("seed", c.seed);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string(to_string(c.id)) + ": " + e.what());
    }
}

} // namespace fmo
