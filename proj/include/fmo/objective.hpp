#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmo/dose_engine.hpp"
#include "fmo/error.hpp"
#include "fmo/influence_matrix.hpp"
#include "fmo/phantom.hpp"

namespace fmo {

enum class GoalKind { MaxDose, MinDose };

/// One dose-volume goal. `volume_fraction` only drives DVH pass/fail
/// reporting; the penalty sums over every voxel of the structure.
struct DoseGoal {
    std::string structure;
    GoalKind kind = GoalKind::MaxDose;
    double dose = 0.0;            // Gy
    double volume_fraction = 0.0; // [0, 1]
    double weight = 1.0;

    void validate() const {
        if (!(dose >= 0.0) || !std::isfinite(dose)) throw ConfigError("goal on '" + structure + "': dose must be >= 0");
        if (!(volume_fraction >= 0.0 && volume_fraction <= 1.0))
            throw ConfigError("goal on '" + structure + "': volume_fraction must be in [0, 1]");
        if (!(weight >= 0.0) || !std::isfinite(weight)) throw ConfigError("goal on '" + structure + "': weight must be >= 0");
    }

    bool operator==(const DoseGoal&) const = default;
};

using BixelPair = std::pair<std::uint32_t, std::uint32_t>;

struct ObjectiveSpec {
    std::vector<DoseGoal> goals;
    double smoothness_weight = 0.01;
    std::vector<BixelPair> neighbor_pairs;
};

struct GoalCost {
    DoseGoal goal;
    double cost = 0.0; // unweighted
};

struct EvalResult {
    double total_cost = 0.0;
    std::vector<GoalCost> per_goal_costs;
    double smoothness_cost = 0.0; // unweighted
};

/// 4-neighborhood pairs (right and down) inside each beam's fluence grid.
inline std::vector<BixelPair> fluence_neighbor_pairs(const BeamConfig& beams) {
    std::vector<BixelPair> pairs;
    for (int b = 0; b < beams.n_beams(); ++b)
        for (int r = 0; r < beams.rows; ++r)
            for (int c = 0; c < beams.cols; ++c) {
                const auto i = static_cast<std::uint32_t>(bixel_index(beams, b, r, c));
                if (c + 1 < beams.cols) pairs.emplace_back(i, static_cast<std::uint32_t>(bixel_index(beams, b, r, c + 1)));
                if (r + 1 < beams.rows) pairs.emplace_back(i, static_cast<std::uint32_t>(bixel_index(beams, b, r + 1, c)));
            }
    return pairs;
}

/// Shipped goal set for a built-in case. Every weight is 1.
inline std::vector<DoseGoal> default_goals(std::string_view case_name) {
    using enum GoalKind;
    if (case_name == "multi_ptv")
        return {
            {"ptv_central", MinDose, 50.0, 0.99, 1.0},  {"ptv_central", MaxDose, 53.0, 0.10, 1.0},
            {"ptv_superior", MinDose, 25.0, 0.99, 1.0}, {"ptv_superior", MaxDose, 35.0, 0.10, 1.0},
            {"ptv_inferior", MinDose, 12.5, 0.99, 1.0}, {"ptv_inferior", MaxDose, 25.0, 0.10, 1.0},
        };
    if (case_name == "head_neck")
        return {
            {"ptv", MinDose, 50.0, 0.90, 1.0},
            {"ptv", MaxDose, 55.0, 0.20, 1.0},
            {"cord", MaxDose, 40.0, 0.0, 1.0},
        };
    if (case_name == "prostate" || case_name == "icm_prostate")
        return {
            {"ptv", MinDose, 70.0, 0.95, 1.0},
            {"ptv", MaxDose, 78.0, 0.05, 1.0},
            {"rectum", MaxDose, 30.0, 0.20, 1.0},
            {"bladder", MaxDose, 40.0, 0.30, 1.0},
        };
    throw ConfigError("unknown case_name '" + std::string(case_name) + "'");
}

/// Cost f(b) = sum_o w_o f_o(L|b|) + lambda * sum_{(i,j)} (|b_i| - |b_j|)^2 with
/// squared positive-part over/under-dose penalties, plus its gradient and
/// Hessian-vector products.
///
/// Only voxels covered by some goal influence the cost, so evaluation runs on
/// the corresponding rows of L, copied once at construction.
class FluenceObjective {
public:
    FluenceObjective(const DoseInfluenceMatrix& L, ObjectiveSpec spec, const Phantom& phantom)
        : spec_(std::move(spec)), n_voxels_(L.n_voxels()), n_bixels_(L.n_bixels()) {
        if (L.n_voxels() != phantom.grid.voxel_count())
            throw DimensionError("dose-influence matrix has " + std::to_string(L.n_voxels()) + " rows, phantom has " +
                                 std::to_string(phantom.grid.voxel_count()) + " voxels");
        if (!(spec_.smoothness_weight >= 0.0) || !std::isfinite(spec_.smoothness_weight))
            throw ConfigError("smoothness_weight must be >= 0");
        std::vector<const std::vector<VoxelIndex>*> masks;
        for (const auto& g : spec_.goals) {
            g.validate();
            const auto& mask = phantom.structure(g.structure);
            if (mask.empty()) throw ConfigError("goal references empty structure '" + g.structure + "'");
            masks.push_back(&mask.voxels);
            rows_ = mask_union(rows_, mask.voxels);
        }
        for (auto [i, j] : spec_.neighbor_pairs)
            if (i >= n_bixels_ || j >= n_bixels_ || i == j)
                throw ConfigError("neighbor pair (" + std::to_string(i) + ", " + std::to_string(j) + ") is invalid");

        for (const auto* m : masks) {
            std::vector<std::uint32_t> local;
            local.reserve(m->size());
            for (auto v : *m)
                local.push_back(static_cast<std::uint32_t>(std::lower_bound(rows_.begin(), rows_.end(), v) - rows_.begin()));
            goal_rows_.push_back(std::move(local));
        }
        std::vector<Triplet> t;
        const auto& rp = L.row_ptr();
        for (std::size_t r = 0; r < rows_.size(); ++r)
            for (std::size_t k = rp[rows_[r]]; k < rp[rows_[r] + 1]; ++k) t.push_back({r, L.cols()[k], L.values()[k]});
        Lg_ = DoseInfluenceMatrix::from_triplets(rows_.size(), n_bixels_, std::move(t));
    }

    std::size_t dimension() const { return n_bixels_; }
    const ObjectiveSpec& spec() const { return spec_; }

    /// Voxels (full-grid indices) covered by at least one goal.
    const std::vector<VoxelIndex>& goal_voxels() const { return rows_; }

    /// Goal part of the cost on a full-grid dose vector.
    double dose_cost(const Vector& d) const {
        if (static_cast<std::size_t>(d.size()) != n_voxels_) throw DimensionError("dose vector has wrong length");
        return goal_dose_cost(gather(d));
    }

    /// Gradient of the goal part with respect to a full-grid dose vector.
    Vector dose_gradient(const Vector& d) const {
        if (static_cast<std::size_t>(d.size()) != n_voxels_) throw DimensionError("dose vector has wrong length");
        return scatter(goal_dose_gradient(gather(d)));
    }

    /// Per-voxel second derivative of the goal part: sum of 2 w_o over violated goals.
    Vector dose_curvature(const Vector& d) const {
        if (static_cast<std::size_t>(d.size()) != n_voxels_) throw DimensionError("dose vector has wrong length");
        return scatter(goal_dose_curvature(gather(d)));
    }

    double smoothness_cost(const Vector& b) const {
        check(b);
        double s = 0.0;
        for (auto [i, j] : spec_.neighbor_pairs) {
            const double diff = std::abs(b[i]) - std::abs(b[j]);
            s += diff * diff;
        }
        return s;
    }

    EvalResult evaluate(const Vector& b) const {
        check(b);
        const Vector d = goal_dose(b);
        EvalResult r;
        for (std::size_t k = 0; k < spec_.goals.size(); ++k) {
            r.per_goal_costs.push_back({spec_.goals[k], goal_cost(k, d)});
            r.total_cost += spec_.goals[k].weight * r.per_goal_costs.back().cost;
        }
        r.smoothness_cost = smoothness_cost(b);
        r.total_cost += spec_.smoothness_weight * r.smoothness_cost;
        return r;
    }

    double value(const Vector& b) const {
        check(b);
        return goal_dose_cost(goal_dose(b)) + spec_.smoothness_weight * smoothness_cost(b);
    }

    double value_and_gradient(const Vector& b, Vector& grad) const {
        check(b);
        const Vector d = goal_dose(b);
        const Vector s = signs(b);
        grad = s.cwiseProduct(Lg_.apply_transpose(goal_dose_gradient(d)));
        if (spec_.smoothness_weight > 0.0) grad += spec_.smoothness_weight * s.cwiseProduct(laplacian(b.cwiseAbs()));
        return goal_dose_cost(d) + spec_.smoothness_weight * smoothness_cost(b);
    }

    Vector gradient(const Vector& b) const {
        Vector g;
        value_and_gradient(b, g);
        return g;
    }

    /// H(b) v = s.(L^T D L (s.v)) + lambda s.(2 Lap (s.v)), s = sign(b); the
    /// curvature of |.| at zero is taken as zero.
    Vector hessian_vector_product(const Vector& b, const Vector& v) const {
        check(b);
        check(v);
        const Vector s = signs(b);
        const Vector sv = s.cwiseProduct(v);
        Vector Lsv = Lg_.apply(sv);
        Lsv.array() *= goal_dose_curvature(goal_dose(b)).array();
        Vector out = s.cwiseProduct(Lg_.apply_transpose(Lsv));
        if (spec_.smoothness_weight > 0.0) out += spec_.smoothness_weight * s.cwiseProduct(laplacian(sv));
        return out;
    }

    static Vector signs(const Vector& b) {
        return b.unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    }

private:
    void check(const Vector& x) const {
        if (static_cast<std::size_t>(x.size()) != n_bixels_)
            throw DimensionError("bixel-space vector length " + std::to_string(x.size()) + " != " +
                                 std::to_string(n_bixels_));
    }

    Vector goal_dose(const Vector& b) const { return Lg_.apply(b.cwiseAbs()); }

    Vector gather(const Vector& d) const {
        Vector out(static_cast<Eigen::Index>(rows_.size()));
        for (std::size_t r = 0; r < rows_.size(); ++r) out[static_cast<Eigen::Index>(r)] = d[rows_[r]];
        return out;
    }

    Vector scatter(const Vector& local) const {
        Vector out = Vector::Zero(static_cast<Eigen::Index>(n_voxels_));
        for (std::size_t r = 0; r < rows_.size(); ++r) out[rows_[r]] = local[static_cast<Eigen::Index>(r)];
        return out;
    }

    double goal_cost(std::size_t k, const Vector& d) const {
        const auto& goal = spec_.goals[k];
        double c = 0.0;
        for (const auto v : goal_rows_[k]) {
            const double excess = goal.kind == GoalKind::MaxDose ? d[v] - goal.dose : goal.dose - d[v];
            if (excess > 0.0) c += excess * excess;
        }
        return c;
    }

    double goal_dose_cost(const Vector& d) const {
        double total = 0.0;
        for (std::size_t k = 0; k < spec_.goals.size(); ++k) total += spec_.goals[k].weight * goal_cost(k, d);
        return total;
    }

    Vector goal_dose_gradient(const Vector& d) const {
        Vector g = Vector::Zero(d.size());
        for (std::size_t k = 0; k < spec_.goals.size(); ++k) {
            const auto& goal = spec_.goals[k];
            const double w2 = 2.0 * goal.weight;
            for (const auto v : goal_rows_[k]) {
                const double excess = goal.kind == GoalKind::MaxDose ? d[v] - goal.dose : goal.dose - d[v];
                if (excess > 0.0) g[v] += goal.kind == GoalKind::MaxDose ? w2 * excess : -w2 * excess;
            }
        }
        return g;
    }

    Vector goal_dose_curvature(const Vector& d) const {
        Vector D = Vector::Zero(d.size());
        for (std::size_t k = 0; k < spec_.goals.size(); ++k) {
            const auto& goal = spec_.goals[k];
            for (const auto v : goal_rows_[k]) {
                const bool violated = goal.kind == GoalKind::MaxDose ? d[v] > goal.dose : d[v] < goal.dose;
                if (violated) D[v] += 2.0 * goal.weight;
            }
        }
        return D;
    }

    /// 2 * (graph Laplacian of the neighbor pairs) applied to x.
    Vector laplacian(const Vector& x) const {
        Vector out = Vector::Zero(x.size());
        for (auto [i, j] : spec_.neighbor_pairs) {
            const double diff = 2.0 * (x[i] - x[j]);
            out[i] += diff;
            out[j] -= diff;
        }
        return out;
    }

    ObjectiveSpec spec_;
    std::size_t n_voxels_ = 0;
    std::size_t n_bixels_ = 0;
    std::vector<VoxelIndex> rows_;
    std::vector<std::vector<std::uint32_t>> goal_rows_;
    DoseInfluenceMatrix Lg_;
};

inline EvalResult eval_cost(const Vector& b, const DoseInfluenceMatrix& L, const ObjectiveSpec& spec,
                            const Phantom& phantom) {
    return FluenceObjective(L, spec, phantom).evaluate(b);
}

inline Vector eval_grad(const Vector& b, const DoseInfluenceMatrix& L, const ObjectiveSpec& spec,
                        const Phantom& phantom) {
    return FluenceObjective(L, spec, phantom).gradient(b);
}

inline Vector hessian_vec_product(const Vector& b, const Vector& v, const DoseInfluenceMatrix& L,
                                  const ObjectiveSpec& spec, const Phantom& phantom) {
    return FluenceObjective(L, spec, phantom).hessian_vector_product(b, v);
}

/// Constant fluence giving the target union a mean dose equal to the largest
/// MinDose goal dose (falls back to all goal structures when no targets exist).
inline Vector standard_initialization(const DoseInfluenceMatrix& L, const Phantom& phantom, const ObjectiveSpec& spec) {
    double prescription = 0.0;
    for (const auto& g : spec.goals)
        if (g.kind == GoalKind::MinDose) prescription = std::max(prescription, g.dose);
    if (prescription <= 0.0) throw ConfigError("standard initialization needs at least one MinDose goal with dose > 0");

    std::vector<VoxelIndex> region = phantom.target_voxels();
    if (region.empty())
        for (const auto& g : spec.goals) region = mask_union(region, phantom.structure(g.structure).voxels);

    const Vector unit_dose = L.apply(Vector::Ones(static_cast<Eigen::Index>(L.n_bixels())));
    double mean = 0.0;
    for (auto v : region) mean += unit_dose[v];
    mean /= static_cast<double>(region.size());
    if (!(mean > 0.0)) throw ConfigError("target region receives no dose from the beams");
    return Vector::Constant(static_cast<Eigen::Index>(L.n_bixels()), prescription / mean);
}

inline const char* to_string(GoalKind k) { return k == GoalKind::MaxDose ? "max_dose" : "min_dose"; }

inline void to_json(nlohmann::json& j, const DoseGoal& g) {
    j = {{"structure", g.structure},
         {"kind", to_string(g.kind)},
         {"dose_gy", g.dose},
         {"volume_fraction", g.volume_fraction},
         {"weight", g.weight}};
}

inline void from_json(const nlohmann::json& j, DoseGoal& g) {
    g.structure = j.at("structure").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "max_dose") g.kind = GoalKind::MaxDose;
    else if (kind == "min_dose") g.kind = GoalKind::MinDose;
    else throw ConfigError("goal kind must be 'max_dose' or 'min_dose', got '" + kind + "'");
    g.dose = j.at("dose_gy").get<double>();
    g.volume_fraction = j.at("volume_fraction").get<double>();
    g.weight = j.value("weight", 1.0);
    g.validate();
}

} // namespace fmo
