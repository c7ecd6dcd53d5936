#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "fmo/dvh.hpp"

using namespace fmo;

namespace {

StructureMask mask_of(std::string name, std::size_t n, std::size_t offset = 0) {
    StructureMask m;
    m.name = std::move(name);
    for (std::size_t i = 0; i < n; ++i) m.voxels.push_back(offset + i);
    return m;
}

std::map<std::string, DVHCurve> single(const Vector& dose, const StructureMask& m) {
    return {{m.name, compute_dvh(dose, m)}};
}

} // namespace

TEST(Dvh, UniformDoseIsAStep) {
    const auto m = mask_of("ptv", 10);
    const auto c = compute_dvh(Vector::Constant(10, 2.0), m);
    for (std::size_t k = 0; k < c.dose_edges.size(); ++k)
        EXPECT_EQ(c.volume_fractions[k], c.dose_edges[k] <= 2.0 + 1e-12 ? 1.0 : 0.0) << c.dose_edges[k];
}

TEST(Dvh, FourDosesHalfAtTwoAndAHalf) {
    const auto m = mask_of("s", 4);
    const auto c = compute_dvh((Vector(4) << 1.0, 2.0, 3.0, 4.0).finished(), m);
    EXPECT_DOUBLE_EQ(c.fraction_at(2.5), 0.5);
}

TEST(Dvh, MatchesCountingOracleOnRandomDoses) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> dose(0.0, 80.0);
    for (int trial = 0; trial < 5; ++trial) {
        Vector d(500);
        for (auto& v : d) v = dose(rng);
        const auto m = mask_of("s", 300, 100);
        const auto c = compute_dvh(d, m, 0.5);
        for (std::size_t k = 0; k < c.dose_edges.size(); ++k) {
            int count = 0;
            for (auto v : m.voxels) count += d[static_cast<Eigen::Index>(v)] >= c.dose_edges[k];
            EXPECT_DOUBLE_EQ(c.volume_fractions[k], count / 300.0);
        }
    }
}

TEST(Dvh, CurveShapeInvariants) {
    std::mt19937_64 rng(1);
    std::exponential_distribution<double> dose(0.05);
    Vector d(400);
    for (auto& v : d) v = dose(rng);
    const auto c = compute_dvh(d, mask_of("s", 400));
    EXPECT_EQ(c.volume_fractions.front(), 1.0);
    EXPECT_EQ(c.volume_fractions.back(), 0.0);
    EXPECT_EQ(c.dose_edges.front(), 0.0);
    EXPECT_GT(c.dose_edges.back(), d.maxCoeff());
    for (std::size_t k = 1; k < c.volume_fractions.size(); ++k) EXPECT_LE(c.volume_fractions[k], c.volume_fractions[k - 1]);
}

TEST(Dvh, ScalingDoseUpNeverLowersFractions) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> dose(0.0, 50.0);
    Vector d(200);
    for (auto& v : d) v = dose(rng);
    const auto m = mask_of("s", 200);
    const auto base = compute_dvh(d, m);
    for (double alpha : {1.01, 1.5, 3.0}) {
        const auto scaled = compute_dvh(alpha * d, m);
        for (std::size_t k = 0; k < base.dose_edges.size(); ++k)
            EXPECT_GE(scaled.volume_fractions[k], base.volume_fractions[k]);
    }
}

TEST(Dvh, PermutationInvariant) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dose(0.0, 50.0);
    Vector d(100);
    for (auto& v : d) v = dose(rng);
    std::vector<int> perm(100);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Vector shuffled(100);
    for (int i = 0; i < 100; ++i) shuffled[perm[i]] = d[i];
    const auto m = mask_of("s", 100);
    EXPECT_EQ(compute_dvh(d, m).volume_fractions, compute_dvh(shuffled, m).volume_fractions);
}

TEST(Dvh, RejectsEmptyMaskAndBadBinWidth) {
    EXPECT_THROW(compute_dvh(Vector::Ones(3), mask_of("empty", 0)), ConfigError);
    EXPECT_THROW(compute_dvh(Vector::Ones(3), mask_of("s", 3), 0.0), ConfigError);
}

TEST(Goals, PtvMinDoseSatisfied) {
    const auto m = mask_of("PTV", 50);
    const auto checks = evaluate_goals(single(Vector::Constant(50, 72.0), m), {{"PTV", GoalKind::MinDose, 70.0, 0.95}});
    ASSERT_EQ(checks.size(), 1u);
    EXPECT_TRUE(checks[0].passed);
    EXPECT_DOUBLE_EQ(checks[0].achieved_fraction, 1.0);
}

TEST(Goals, OarMaxDoseViolated) {
    const auto m = mask_of("OAR", 40);
    Vector d(40);
    for (int i = 0; i < 40; ++i) d[i] = i < 20 ? 35.0 : 10.0;
    const auto checks = evaluate_goals(single(d, m), {{"OAR", GoalKind::MaxDose, 30.0, 0.20}});
    EXPECT_FALSE(checks[0].passed);
    EXPECT_DOUBLE_EQ(checks[0].achieved_fraction, 0.5);
}

TEST(Goals, OarMaxDoseSatisfiedBelowVolumeLimit) {
    const auto m = mask_of("OAR", 10);
    Vector d = Vector::Constant(10, 5.0);
    d[0] = 40.0;
    const auto checks = evaluate_goals(single(d, m), {{"OAR", GoalKind::MaxDose, 30.0, 0.20}});
    EXPECT_TRUE(checks[0].passed);
    EXPECT_DOUBLE_EQ(checks[0].achieved_fraction, 0.1);
}

TEST(Goals, MinDoseAtZeroAlwaysPasses) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dose(0.0, 3.0);
    Vector d(30);
    for (auto& v : d) v = dose(rng);
    d[0] = 0.0;
    const auto checks = evaluate_goals(single(d, mask_of("s", 30)), {{"s", GoalKind::MinDose, 0.0, 1.0}});
    EXPECT_TRUE(checks[0].passed);
}

TEST(Goals, MissingStructureIsAnError) {
    EXPECT_THROW(evaluate_goals(single(Vector::Ones(3), mask_of("a", 3)), {{"b", GoalKind::MaxDose, 1.0, 0.5}}), ConfigError);
}

TEST(Dvh, CsvHasOneRowPerEdge) {
    const auto m = mask_of("s", 4);
    const auto dvhs = single((Vector(4) << 0.0, 0.1, 0.2, 0.3).finished(), m);
    std::ostringstream os;
    write_dvh_csv(os, dvhs);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "structure,dose_gy,volume_fraction");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        EXPECT_EQ(line.rfind("s,", 0), 0u);
    }
    EXPECT_EQ(rows, dvhs.at("s").dose_edges.size());
}
