#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <string>

#include "fmo/influence_matrix.hpp"

namespace fmo {

/// Anything with a cost and a gradient over Eigen vectors.
template <typename F>
concept SmoothObjective = requires(const F& f, const Vector& x, Vector& g) {
    { f.dimension() } -> std::convertible_to<std::size_t>;
    { f.value(x) } -> std::convertible_to<double>;
    { f.value_and_gradient(x, g) } -> std::convertible_to<double>;
};

template <typename F>
concept HessianVectorObjective = SmoothObjective<F> && requires(const F& f, const Vector& x) {
    { f.hessian_vector_product(x, x) } -> std::convertible_to<Vector>;
};

struct LineSearchParams {
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_evals = 25;

    void validate() const {
        if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) throw std::invalid_argument("line search needs 0 < c1 < c2 < 1");
        if (max_evals < 1) throw std::invalid_argument("line search max_evals must be >= 1");
    }
};

struct LineSearchResult {
    bool converged = false; // strong Wolfe conditions hold at `step`
    double step = 0.0;
    Vector x;
    double f = 0.0;
    Vector g;
    int evals = 0;
};

namespace detail {

/// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), safeguarded
/// into the interior of [a, b] (either order).
inline double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
    const double lo = std::min(a, b), hi = std::max(a, b);
    const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - da * db;
    double t = std::numeric_limits<double>::quiet_NaN();
    if (disc >= 0.0) {
        const double d2 = std::copysign(std::sqrt(disc), b - a);
        t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    }
    const double margin = 0.1 * (hi - lo);
    if (!std::isfinite(t) || t < lo + margin || t > hi - margin) t = 0.5 * (lo + hi);
    return t;
}

} // namespace detail

/// Strong Wolfe line search (bracketing phase followed by cubic-interpolation
/// zoom). Throws std::invalid_argument when p is not a descent direction.
/// On failure after `max_evals` the result carries the lowest sufficient-decrease
/// point seen (or the start point) with `converged == false`.
template <SmoothObjective F>
LineSearchResult wolfe_line_search(const F& f, const Vector& x, const Vector& p, double f0, const Vector& g0,
                                   const LineSearchParams& params, double initial_step = 1.0,
                                   double max_step = 1e20) {
    params.validate();
    const double dphi0 = g0.dot(p);
    if (!(dphi0 < 0.0)) throw std::invalid_argument("line search direction is not a descent direction");
    if (!(initial_step > 0.0)) initial_step = 1.0;

    LineSearchResult best{false, 0.0, x, f0, g0, 0};
    LineSearchResult cur;
    auto evaluate = [&](double a) {
        cur.step = a;
        cur.x = x + a * p;
        cur.f = f.value_and_gradient(cur.x, cur.g);
        ++best.evals;
        if (std::isfinite(cur.f) && cur.f <= f0 + params.c1 * a * dphi0 && cur.f < best.f) {
            const int evals = best.evals;
            best = cur;
            best.evals = evals;
        }
        return cur.g.dot(p);
    };
    auto accept = [&]() {
        const int evals = best.evals;
        best = cur;
        best.converged = true;
        best.evals = evals;
        return best;
    };

    auto zoom = [&](double lo, double f_lo, double d_lo, double hi, double f_hi, double d_hi) {
        while (best.evals < params.max_evals) {
            const double a = detail::cubic_minimizer(lo, f_lo, d_lo, hi, f_hi, d_hi);
            if (!(a > 0.0) || a == lo || a == hi) break;
            const double da = evaluate(a);
            if (!std::isfinite(cur.f) || cur.f > f0 + params.c1 * a * dphi0 || cur.f >= f_lo) {
                hi = a;
                f_hi = cur.f;
                d_hi = da;
                if (!std::isfinite(f_hi)) d_hi = std::numeric_limits<double>::quiet_NaN();
            } else {
                if (std::abs(da) <= -params.c2 * dphi0) return accept();
                if (da * (hi - lo) >= 0.0) {
                    hi = lo;
                    f_hi = f_lo;
                    d_hi = d_lo;
                }
                lo = a;
                f_lo = cur.f;
                d_lo = da;
            }
        }
        return best;
    };

    double prev = 0.0, f_prev = f0, d_prev = dphi0;
    double a = std::min(initial_step, max_step);
    while (best.evals < params.max_evals) {
        const double da = evaluate(a);
        if (!std::isfinite(cur.f) || cur.f > f0 + params.c1 * a * dphi0 || (best.evals > 1 && cur.f >= f_prev))
            return zoom(prev, f_prev, d_prev, a, cur.f, std::isfinite(cur.f) ? da : std::numeric_limits<double>::quiet_NaN());
        if (std::abs(da) <= -params.c2 * dphi0) return accept();
        if (da >= 0.0) return zoom(a, cur.f, da, prev, f_prev, d_prev);
        if (a >= max_step) break;
        prev = a;
        f_prev = cur.f;
        d_prev = da;
        a = std::min(4.0 * a, max_step);
    }
    return best;
}

/// Backtracking search for the Armijo sufficient-decrease condition only.
template <SmoothObjective F>
LineSearchResult armijo_backtracking(const F& f, const Vector& x, const Vector& p, double f0, const Vector& g0,
                                     double c1, int max_evals, double initial_step, double shrink = 0.5) {
    const double dphi0 = g0.dot(p);
    if (!(dphi0 < 0.0)) throw std::invalid_argument("line search direction is not a descent direction");
    LineSearchResult r{false, 0.0, x, f0, g0, 0};
    double a = initial_step > 0.0 ? initial_step : 1.0;
    while (r.evals < max_evals) {
        Vector xa = x + a * p;
        Vector ga;
        const double fa = f.value_and_gradient(xa, ga);
        ++r.evals;
        if (std::isfinite(fa) && fa <= f0 + c1 * a * dphi0) {
            r.converged = true;
            r.step = a;
            r.x = std::move(xa);
            r.f = fa;
            r.g = std::move(ga);
            return r;
        }
        a *= shrink;
    }
    return r;
}

} // namespace fmo
