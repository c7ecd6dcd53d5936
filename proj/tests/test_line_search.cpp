#include <gtest/gtest.h>

#include "fmo/line_search.hpp"
#include "toy_objectives.hpp"

using namespace fmo;
using fmo::checks::Quadratic;

namespace {

Quadratic parabola() {
    Quadratic q;
    q.A = Eigen::MatrixXd::Constant(1, 1, 2.0);
    q.b = Vector::Zero(1);
    return q;
}

struct Linear {
    std::size_t dimension() const { return 1; }
    double value(const Vector& x) const { return -x[0]; }
    double value_and_gradient(const Vector& x, Vector& g) const {
        g = Vector::Constant(1, -1.0);
        return value(x);
    }
};

} // namespace

TEST(WolfeLineSearch, ParabolaStepSatisfiesBothConditions) {
    const auto f = parabola();
    const Vector x = Vector::Constant(1, 1.0);
    Vector g0;
    const double f0 = f.value_and_gradient(x, g0);
    const Vector p = -g0;
    ASSERT_DOUBLE_EQ(p[0], -2.0);
    LineSearchParams params;
    const auto r = wolfe_line_search(f, x, p, f0, g0, params);
    ASSERT_TRUE(r.converged);
    EXPECT_GT(r.step, 0.0);
    EXPECT_LE(r.f, f0 + params.c1 * r.step * g0.dot(p));
    EXPECT_LE(std::abs(r.g.dot(p)), params.c2 * std::abs(g0.dot(p)));
    EXPECT_DOUBLE_EQ(r.x[0], 1.0 + r.step * p[0]);
}

TEST(WolfeLineSearch, TightCurvatureFindsExactStep) {
    const auto f = parabola();
    const Vector x = Vector::Constant(1, 1.0);
    Vector g0;
    const double f0 = f.value_and_gradient(x, g0);
    LineSearchParams params{1e-7, 1e-6, 25};
    const auto r = wolfe_line_search(f, x, Vector(-g0), f0, g0, params, 0.3);
    ASSERT_TRUE(r.converged);
    EXPECT_NEAR(r.step, 0.5, 1e-6);
}

TEST(WolfeLineSearch, LinearFunctionFailsAfterBudget) {
    const Linear f;
    const Vector x = Vector::Zero(1);
    Vector g0;
    const double f0 = f.value_and_gradient(x, g0);
    LineSearchParams params{1e-4, 0.9, 6};
    const auto r = wolfe_line_search(f, x, Vector::Constant(1, 1.0), f0, g0, params);
    EXPECT_FALSE(r.converged);
    EXPECT_EQ(r.evals, params.max_evals);
    EXPECT_GT(r.step, 0.0);
    EXPECT_LT(r.f, f0);
}

TEST(WolfeLineSearch, StepIsAlwaysPositive) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = fmo::checks::random_quadratic(6, 50.0, rng);
        const Vector x = Vector::Zero(6);
        Vector g0;
        const double f0 = q.value_and_gradient(x, g0);
        const auto r = wolfe_line_search(q, x, Vector(-g0), f0, g0, LineSearchParams{}, 0.01 * (trial + 1));
        EXPECT_TRUE(r.converged);
        EXPECT_GT(r.step, 0.0);
        EXPECT_LT(r.f, f0);
    }
}

TEST(WolfeLineSearch, RejectsNonDescentDirection) {
    const auto f = parabola();
    const Vector x = Vector::Constant(1, 1.0);
    Vector g0;
    const double f0 = f.value_and_gradient(x, g0);
    EXPECT_THROW(wolfe_line_search(f, x, g0, f0, g0, LineSearchParams{}), std::invalid_argument);
    EXPECT_THROW(wolfe_line_search(f, x, Vector::Zero(1), f0, g0, LineSearchParams{}), std::invalid_argument);
}

TEST(WolfeLineSearch, RejectsBadParameters) {
    const auto f = parabola();
    const Vector x = Vector::Constant(1, 1.0);
    Vector g0;
    const double f0 = f.value_and_gradient(x, g0);
    EXPECT_THROW(wolfe_line_search(f, x, Vector(-g0), f0, g0, LineSearchParams{0.5, 0.4, 25}), std::invalid_argument);
    EXPECT_THROW(wolfe_line_search(f, x, Vector(-g0), f0, g0, LineSearchParams{1e-4, 0.9, 0}), std::invalid_argument);
}

TEST(ArmijoBacktracking, HalvesUntilSufficientDecrease) {
    const auto f = parabola();
    const Vector x = Vector::Constant(1, 1.0);
    Vector g0;
    const double f0 = f.value_and_gradient(x, g0);
    const auto r = armijo_backtracking(f, x, Vector(-g0), f0, g0, 1e-4, 25, 4.0);
    ASSERT_TRUE(r.converged);
    EXPECT_DOUBLE_EQ(r.step, 0.5);
    EXPECT_DOUBLE_EQ(r.f, 0.0);
}
