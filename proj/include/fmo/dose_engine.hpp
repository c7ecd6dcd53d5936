#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include <json.hpp>

#include "fmo/error.hpp"
#include "fmo/grid.hpp"
#include "fmo/influence_matrix.hpp"
#include "fmo/phantom.hpp"

namespace fmo {

/// Coplanar beam arrangement. Gantry rotates about the z axis; each beam
/// carries a rows x cols fluence grid defined on the isocenter plane, rows
/// along z and columns along the beam's lateral axis.
struct BeamConfig {
    std::vector<double> gantry_angles_deg;
    Vec3 isocenter{};
    int rows = 10;
    int cols = 10;
    double bixel_size_row = 5.0; // mm along z
    double bixel_size_col = 5.0; // mm along the lateral axis
    double source_distance = 1000.0;

    static BeamConfig evenly_spaced(int n_beams) {
        if (n_beams < 1) throw ConfigError("n_beams must be >= 1");
        BeamConfig b;
        for (int i = 0; i < n_beams; ++i) b.gantry_angles_deg.push_back(360.0 * i / n_beams);
        return b;
    }

    int n_beams() const { return static_cast<int>(gantry_angles_deg.size()); }
    int bixels_per_beam() const { return rows * cols; }
    std::size_t n_bixels() const { return static_cast<std::size_t>(n_beams()) * static_cast<std::size_t>(bixels_per_beam()); }

    void validate() const {
        if (gantry_angles_deg.empty()) throw ConfigError("beam configuration has no beams");
        std::set<long long> seen;
        for (double a : gantry_angles_deg) {
            if (!std::isfinite(a)) throw ConfigError("gantry angle must be finite");
            double m = std::fmod(a, 360.0);
            if (m < 0.0) m += 360.0;
            if (!seen.insert(std::llround(m * 1e6) % 360000000LL).second)
                throw ConfigError("gantry angles must be distinct modulo 360 degrees");
        }
        if (rows < 1 || cols < 1) throw ConfigError("bixel grid must be at least 1x1");
        if (!(bixel_size_row > 0.0 && bixel_size_col > 0.0)) throw ConfigError("bixel_size must be positive");
        if (!(source_distance > 0.0)) throw ConfigError("source_distance must be positive");
    }
};

/// Parameters of the simplified pencil-beam kernel:
///   value = dose_per_fluence * exp(-mu * depth) * exp(-r^2 / (2 sigma^2))
/// The lateral factor is truncated where it drops below `cutoff`, and entries
/// below `cutoff` times their bixel's (column) maximum are dropped.
struct PencilBeamParams {
    double mu = 0.005;    // 1/mm
    double sigma = 4.0;   // mm
    double cutoff = 1e-4; // relative
    double dose_per_fluence = 0.1; // Gy per unit fluence on the central axis at zero depth

    void validate() const {
        if (!(mu >= 0.0)) throw ConfigError("attenuation mu must be >= 0");
        if (!(sigma > 0.0)) throw ConfigError("lateral sigma must be > 0");
        if (!(cutoff > 0.0 && cutoff < 1.0)) throw ConfigError("cutoff must be in (0, 1)");
        if (!(dose_per_fluence > 0.0)) throw ConfigError("dose_per_fluence must be > 0");
    }

    double kernel_radius() const { return sigma * std::sqrt(-2.0 * std::log(cutoff)); }
};

/// Geometry of one beam in world coordinates.
struct BeamFrame {
    Vec3 source;
    Vec3 direction; // source -> isocenter, unit
    Vec3 lateral;   // column axis, unit
    Vec3 axial;     // row axis, unit

    static BeamFrame make(const BeamConfig& cfg, int beam) {
        const double th = cfg.gantry_angles_deg.at(static_cast<std::size_t>(beam)) * std::numbers::pi / 180.0;
        BeamFrame f;
        f.direction = {-std::sin(th), std::cos(th), 0.0};
        f.source = cfg.isocenter - f.direction * cfg.source_distance;
        f.lateral = {std::cos(th), std::sin(th), 0.0};
        f.axial = {0.0, 0.0, 1.0};
        return f;
    }

    /// Center of bixel (row, col) on the isocenter plane.
    Vec3 bixel_center(const BeamConfig& cfg, int row, int col) const {
        const double u = (col - 0.5 * (cfg.cols - 1)) * cfg.bixel_size_col;
        const double w = (row - 0.5 * (cfg.rows - 1)) * cfg.bixel_size_row;
        return cfg.isocenter + lateral * u + axial * w;
    }
};

/// Perpendicular distance from p to the ray that starts at `source` and passes through `target`.
inline double distance_to_ray(const Vec3& p, const Vec3& source, const Vec3& target) {
    const Vec3 e = normalized(target - source);
    return norm(cross(p - source, e));
}

/// Dense membership lookup for the body mask.
class BodyLookup {
public:
    BodyLookup(const VoxelGrid& grid, const StructureMask& body) : grid_(grid), inside_(grid.voxel_count(), 0) {
        for (auto v : body.voxels) inside_[v] = 1;
    }

    bool inside(const Vec3& p) const {
        std::array<int, 3> ijk{};
        return grid_.locate(p, ijk) && inside_[grid_.index(ijk[0], ijk[1], ijk[2])] != 0;
    }

    const VoxelGrid& grid() const { return grid_; }

private:
    VoxelGrid grid_;
    std::vector<char> inside_;
};

/// Path length (mm) inside the body along the segment from `point` back toward
/// `source`, sampled at midpoints of steps of half the smallest voxel spacing.
inline double radiological_depth(const BodyLookup& body, const Vec3& source, const Vec3& point) {
    const VoxelGrid& g = body.grid();
    const double step = 0.5 * g.min_spacing();
    const Vec3 toward = source - point;
    const double seg = norm(toward);
    if (seg == 0.0) return 0.0;
    const Vec3 dir = toward * (1.0 / seg);

    // Distance along dir at which the ray leaves the grid box (slab method).
    const Vec3 lo = g.lower_bound(), hi = g.upper_bound();
    const double p[3] = {point.x, point.y, point.z}, d[3] = {dir.x, dir.y, dir.z};
    const double l[3] = {lo.x, lo.y, lo.z}, h[3] = {hi.x, hi.y, hi.z};
    double t_exit = seg;
    for (int a = 0; a < 3; ++a) {
        if (d[a] > 0.0) t_exit = std::min(t_exit, (h[a] - p[a]) / d[a]);
        else if (d[a] < 0.0) t_exit = std::min(t_exit, (l[a] - p[a]) / d[a]);
    }
    if (t_exit <= 0.0) return 0.0;

    const auto n_steps = static_cast<long>(std::ceil(t_exit / step));
    long inside = 0;
    for (long k = 0; k < n_steps; ++k) {
        const double t = (k + 0.5) * step;
        if (t > t_exit) break;
        if (body.inside(point + dir * t)) ++inside;
    }
    return inside * step;
}

/// Unfiltered kernel value for one (voxel position, bixel) pair; 0 outside the kernel support.
inline double pencil_beam_value(const PencilBeamParams& params, double depth, double lateral_distance) {
    if (lateral_distance > params.kernel_radius()) return 0.0;
    return params.dose_per_fluence * std::exp(-params.mu * depth) *
           std::exp(-lateral_distance * lateral_distance / (2.0 * params.sigma * params.sigma));
}

/// Global bixel index of (beam, row, col).
inline std::size_t bixel_index(const BeamConfig& cfg, int beam, int row, int col) {
    return static_cast<std::size_t>(beam) * static_cast<std::size_t>(cfg.bixels_per_beam()) +
           static_cast<std::size_t>(row) * static_cast<std::size_t>(cfg.cols) + static_cast<std::size_t>(col);
}

/// Drops entries below `cutoff` times their column maximum.
inline std::vector<Triplet> apply_column_cutoff(std::vector<Triplet> entries, std::size_t n_cols, double cutoff) {
    std::vector<double> col_max(n_cols, 0.0);
    for (const auto& t : entries) col_max[t.col] = std::max(col_max[t.col], t.value);
    std::erase_if(entries, [&](const Triplet& t) { return t.value <= 0.0 || t.value < cutoff * col_max[t.col]; });
    return entries;
}

/// Sparse dose-influence matrix of the pencil-beam model. Only body voxels
/// receive dose. Rows span every grid voxel.
inline DoseInfluenceMatrix compute_influence_matrix(const Phantom& phantom, const BeamConfig& beams,
                                                    const PencilBeamParams& params = {}) {
    beams.validate();
    params.validate();
    if (phantom.body.empty()) throw ConfigError("phantom '" + phantom.case_name + "' has an empty body mask");

    const VoxelGrid& grid = phantom.grid;
    const BodyLookup body(grid, phantom.body);
    const double r_kernel = params.kernel_radius();
    std::vector<Triplet> entries;

    for (int beam = 0; beam < beams.n_beams(); ++beam) {
        const BeamFrame frame = BeamFrame::make(beams, beam);
        std::vector<Vec3> centers(static_cast<std::size_t>(beams.bixels_per_beam()));
        for (int r = 0; r < beams.rows; ++r)
            for (int c = 0; c < beams.cols; ++c)
                centers[static_cast<std::size_t>(r * beams.cols + c)] = frame.bixel_center(beams, r, c);

        for (const VoxelIndex v : phantom.body.voxels) {
            const Vec3 p = grid.center(v);
            const Vec3 rel = p - frame.source;
            const double t = dot(rel, frame.direction);
            if (t <= 0.0) continue;
            // Project onto the isocenter plane and scan only bixels within a
            // generously enlarged kernel footprint; the exact distance test follows.
            const double mag = beams.source_distance / t;
            const double u = dot(rel, frame.lateral) * mag;
            const double w = dot(rel, frame.axial) * mag;
            const double reach = 1.1 * r_kernel * mag + 1.0;
            const int c_lo = std::max(0, static_cast<int>(std::floor((u - reach) / beams.bixel_size_col + 0.5 * (beams.cols - 1))));
            const int c_hi = std::min(beams.cols - 1, static_cast<int>(std::ceil((u + reach) / beams.bixel_size_col + 0.5 * (beams.cols - 1))));
            const int r_lo = std::max(0, static_cast<int>(std::floor((w - reach) / beams.bixel_size_row + 0.5 * (beams.rows - 1))));
            const int r_hi = std::min(beams.rows - 1, static_cast<int>(std::ceil((w + reach) / beams.bixel_size_row + 0.5 * (beams.rows - 1))));
            if (c_lo > c_hi || r_lo > r_hi) continue;

            const double depth = radiological_depth(body, frame.source, p);
            for (int r = r_lo; r <= r_hi; ++r)
                for (int c = c_lo; c <= c_hi; ++c) {
                    const double dist = distance_to_ray(p, frame.source, centers[static_cast<std::size_t>(r * beams.cols + c)]);
                    const double value = pencil_beam_value(params, depth, dist);
                    if (value > 0.0) entries.push_back({v, bixel_index(beams, beam, r, c), value});
                }
        }
    }
    entries = apply_column_cutoff(std::move(entries), beams.n_bixels(), params.cutoff);
    return DoseInfluenceMatrix::from_triplets(grid.voxel_count(), beams.n_bixels(), std::move(entries));
}

/// Evenly spaced beams at the target centroid whose fluence grid (fixed
/// bixel size) covers the projection of every target structure plus `margin`
/// from any gantry angle.
inline BeamConfig conformal_beam_config(const Phantom& phantom, int n_beams = 9, double bixel_size = 5.0,
                                        double margin = 5.0) {
    BeamConfig cfg = BeamConfig::evenly_spaced(n_beams);
    cfg.bixel_size_row = cfg.bixel_size_col = bixel_size;
    const auto targets = phantom.target_voxels();
    if (targets.empty()) return cfg;

    Vec3 centroid{};
    for (auto v : targets) centroid = centroid + phantom.grid.center(v);
    centroid = centroid * (1.0 / static_cast<double>(targets.size()));
    // Snap to the grid so that symmetric cases stay symmetric.
    const auto snap = [](double x) { return std::round(x * 2.0) / 2.0; };
    cfg.isocenter = {snap(centroid.x), snap(centroid.y), snap(centroid.z)};

    double radial = 0.0, axial = 0.0;
    const Vec3 h = phantom.grid.spacing * 0.5;
    for (auto v : targets) {
        const Vec3 d = phantom.grid.center(v) - cfg.isocenter;
        radial = std::max(radial, std::hypot(std::abs(d.x) + h.x, std::abs(d.y) + h.y));
        axial = std::max(axial, std::abs(d.z) + h.z);
    }
    cfg.cols = static_cast<int>(std::ceil(2.0 * (radial + margin) / bixel_size));
    cfg.rows = static_cast<int>(std::ceil(2.0 * (axial + margin) / bixel_size));
    return cfg;
}

inline void to_json(nlohmann::json& j, const BeamConfig& b) {
    j = {{"gantry_angles_deg", b.gantry_angles_deg}, {"isocenter", b.isocenter},
         {"rows", b.rows},                           {"cols", b.cols},
         {"bixel_size", {b.bixel_size_row, b.bixel_size_col}},
         {"source_distance", b.source_distance}};
}

inline void to_json(nlohmann::json& j, const PencilBeamParams& p) {
    j = {{"mu", p.mu}, {"sigma", p.sigma}, {"cutoff", p.cutoff}, {"dose_per_fluence", p.dose_per_fluence}};
}

inline void from_json(const nlohmann::json& j, PencilBeamParams& p) {
    p.mu = j.value("mu", p.mu);
    p.sigma = j.value("sigma", p.sigma);
    p.cutoff = j.value("cutoff", p.cutoff);
    p.dose_per_fluence = j.value("dose_per_fluence", p.dose_per_fluence);
}

} // namespace fmo
