#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fmo/error.hpp"
#include "fmo/influence_matrix.hpp"
#include "fmo/objective.hpp"
#include "fmo/phantom.hpp"

namespace fmo {

/// Cumulative dose-volume histogram: volume_fractions[k] is the fraction of
/// the structure receiving at least dose_edges[k] = k * bin_width.
struct DVHCurve {
    std::string structure;
    double bin_width = 0.1;
    std::vector<double> dose_edges;
    std::vector<double> volume_fractions;

    /// Linear interpolation between edges, constant beyond either end.
    double fraction_at(double dose) const {
        if (dose_edges.empty()) return 0.0;
        if (dose <= 0.0) return volume_fractions.front();
        const double pos = dose / bin_width;
        const auto k = static_cast<std::size_t>(std::floor(pos));
        if (k + 1 >= dose_edges.size()) return volume_fractions.back();
        const double t = pos - static_cast<double>(k);
        return (1.0 - t) * volume_fractions[k] + t * volume_fractions[k + 1];
    }
};

inline DVHCurve compute_dvh(const Vector& dose, const StructureMask& mask, double bin_width = 0.1) {
    if (mask.empty()) throw ConfigError("cannot compute a DVH for empty structure '" + mask.name + "'");
    if (!(bin_width > 0.0)) throw ConfigError("DVH bin width must be positive");

    std::vector<double> d;
    d.reserve(mask.size());
    for (auto v : mask.voxels) {
        if (v >= static_cast<std::size_t>(dose.size())) throw DimensionError("structure voxel outside the dose vector");
        d.push_back(dose[v]);
    }
    std::sort(d.begin(), d.end());

    DVHCurve curve;
    curve.structure = mask.name;
    curve.bin_width = bin_width;
    const auto n_edges = static_cast<std::size_t>(std::ceil(std::max(d.back(), 0.0) / bin_width)) + 2;
    const auto total = static_cast<double>(d.size());
    curve.dose_edges.reserve(n_edges);
    curve.volume_fractions.reserve(n_edges);
    for (std::size_t k = 0; k < n_edges; ++k) {
        const double edge = static_cast<double>(k) * bin_width;
        const auto at_least = d.end() - std::lower_bound(d.begin(), d.end(), edge);
        curve.dose_edges.push_back(edge);
        curve.volume_fractions.push_back(static_cast<double>(at_least) / total);
    }
    return curve;
}

/// DVHs of the body and every structure, keyed by structure name.
inline std::map<std::string, DVHCurve> compute_dvhs(const Phantom& phantom, const Vector& dose, double bin_width = 0.1) {
    std::map<std::string, DVHCurve> out;
    if (!phantom.body.empty()) out.emplace(phantom.body.name, compute_dvh(dose, phantom.body, bin_width));
    for (const auto& s : phantom.structures)
        if (!s.empty()) out.emplace(s.name, compute_dvh(dose, s, bin_width));
    return out;
}

struct GoalCheck {
    DoseGoal goal;
    double achieved_fraction = 0.0;
    bool passed = false;
};

/// MaxDose passes when at most o_v of the structure receives o_d or more;
/// MinDose passes when at least o_v does.
inline std::vector<GoalCheck> evaluate_goals(const std::map<std::string, DVHCurve>& dvhs, const std::vector<DoseGoal>& goals) {
    std::vector<GoalCheck> out;
    for (const auto& g : goals) {
        const auto it = dvhs.find(g.structure);
        if (it == dvhs.end()) throw ConfigError("no DVH for goal structure '" + g.structure + "'");
        const double frac = it->second.fraction_at(g.dose);
        const bool passed = g.kind == GoalKind::MaxDose ? frac <= g.volume_fraction : frac >= g.volume_fraction;
        out.push_back({g, frac, passed});
    }
    return out;
}

/// CSV with columns structure,dose_gy,volume_fraction.
inline void write_dvh_csv(std::ostream& os, const std::map<std::string, DVHCurve>& dvhs) {
    os << "structure,dose_gy,volume_fraction\n";
    os.precision(10);
    for (const auto& [name, c] : dvhs)
        for (std::size_t k = 0; k < c.dose_edges.size(); ++k)
            os << name << ',' << c.dose_edges[k] << ',' << c.volume_fractions[k] << '\n';
}

} // namespace fmo
