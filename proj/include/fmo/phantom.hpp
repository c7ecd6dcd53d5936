#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fmo/error.hpp"
#include "fmo/grid.hpp"

namespace fmo {

// ---------------------------------------------------------------------------
// Geometric primitives. All lengths in mm, all positions in world coordinates.
// ---------------------------------------------------------------------------

struct Sphere {
    Vec3 center;
    double radius = 0.0;
};

struct Ellipsoid {
    Vec3 center;
    Vec3 semi_axes; // along x, y, z
};

/// Finite right circular cylinder around `axis` through `center`.
struct Cylinder {
    Vec3 center;
    double radius = 0.0;
    double length = 0.0;
    Vec3 axis{0.0, 0.0, 1.0};
};

/// Cylindrical annulus. A non-zero `opening` keeps only the half with
/// (p - center) . opening >= 0, which turns the ring into a C/U shape.
struct Shell {
    Vec3 center;
    double inner_radius = 0.0;
    double outer_radius = 0.0;
    double length = 0.0;
    Vec3 axis{0.0, 0.0, 1.0};
    Vec3 opening{};
};

using Primitive = std::variant<Sphere, Ellipsoid, Cylinder, Shell>;

namespace detail {

inline bool inside_axial(const Vec3& rel, const Vec3& axis, double length, double& radial_sq) {
    const Vec3 a = normalized(axis);
    const double t = dot(rel, a);
    if (std::abs(t) > 0.5 * length) return false;
    radial_sq = dot(rel, rel) - t * t;
    return true;
}

struct Contains {
    Vec3 p;
    bool operator()(const Sphere& s) const {
        const Vec3 r = p - s.center;
        return s.radius > 0.0 && dot(r, r) <= s.radius * s.radius;
    }
    bool operator()(const Ellipsoid& e) const {
        const auto& a = e.semi_axes;
        if (!(a.x > 0.0 && a.y > 0.0 && a.z > 0.0)) return false;
        const Vec3 r = p - e.center;
        const double q = (r.x / a.x) * (r.x / a.x) + (r.y / a.y) * (r.y / a.y) + (r.z / a.z) * (r.z / a.z);
        return q <= 1.0;
    }
    bool operator()(const Cylinder& c) const {
        if (!(c.radius > 0.0 && c.length > 0.0)) return false;
        double rsq = 0.0;
        return inside_axial(p - c.center, c.axis, c.length, rsq) && rsq <= c.radius * c.radius;
    }
    bool operator()(const Shell& s) const {
        if (!(s.outer_radius > 0.0 && s.length > 0.0) || s.inner_radius >= s.outer_radius) return false;
        const Vec3 rel = p - s.center;
        double rsq = 0.0;
        if (!inside_axial(rel, s.axis, s.length, rsq)) return false;
        if (rsq > s.outer_radius * s.outer_radius || rsq < s.inner_radius * s.inner_radius) return false;
        return dot(s.opening, s.opening) == 0.0 || dot(rel, s.opening) >= 0.0;
    }
};

/// Radius of a sphere about the primitive's center that encloses it.
struct BoundingRadius {
    double operator()(const Sphere& s) const { return std::max(s.radius, 0.0); }
    double operator()(const Ellipsoid& e) const {
        return std::max({e.semi_axes.x, e.semi_axes.y, e.semi_axes.z, 0.0});
    }
    double operator()(const Cylinder& c) const { return std::hypot(std::max(c.radius, 0.0), 0.5 * std::max(c.length, 0.0)); }
    double operator()(const Shell& s) const {
        return std::hypot(std::max(s.outer_radius, 0.0), 0.5 * std::max(s.length, 0.0));
    }
};

} // namespace detail

inline bool contains(const Primitive& prim, const Vec3& p) { return std::visit(detail::Contains{p}, prim); }

inline Vec3 primitive_center(const Primitive& prim) {
    return std::visit([](const auto& s) { return s.center; }, prim);
}

inline bool has_positive_dimensions(const Primitive& prim) {
    return std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Sphere>) return s.radius > 0.0;
            else if constexpr (std::is_same_v<T, Ellipsoid>)
                return s.semi_axes.x > 0.0 && s.semi_axes.y > 0.0 && s.semi_axes.z > 0.0;
            else if constexpr (std::is_same_v<T, Cylinder>) return s.radius > 0.0 && s.length > 0.0;
            else return s.inner_radius >= 0.0 && s.outer_radius > s.inner_radius && s.length > 0.0;
        },
        prim);
}

/// Uniform scaling of a primitive about the world origin.
inline Primitive scaled(const Primitive& prim, double factor) {
    return std::visit(
        [factor](auto s) -> Primitive {
            using T = std::decay_t<decltype(s)>;
            s.center = s.center * factor;
            if constexpr (std::is_same_v<T, Sphere>) s.radius *= factor;
            else if constexpr (std::is_same_v<T, Ellipsoid>) s.semi_axes = s.semi_axes * factor;
            else if constexpr (std::is_same_v<T, Cylinder>) {
                s.radius *= factor;
                s.length *= factor;
            } else {
                s.inner_radius *= factor;
                s.outer_radius *= factor;
                s.length *= factor;
            }
            return s;
        },
        prim);
}

// ---------------------------------------------------------------------------
// Masks and phantoms
// ---------------------------------------------------------------------------

enum class StructureRole { Target, OrganAtRisk };

/// Named set of voxel indices, kept sorted and unique.
struct StructureMask {
    std::string name;
    std::vector<VoxelIndex> voxels;
    StructureRole role = StructureRole::OrganAtRisk;

    bool empty() const { return voxels.empty(); }
    std::size_t size() const { return voxels.size(); }
    bool contains(VoxelIndex v) const { return std::binary_search(voxels.begin(), voxels.end(), v); }
};

inline std::vector<VoxelIndex> mask_union(const std::vector<VoxelIndex>& a, const std::vector<VoxelIndex>& b) {
    std::vector<VoxelIndex> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline std::vector<VoxelIndex> mask_difference(const std::vector<VoxelIndex>& a, const std::vector<VoxelIndex>& b) {
    std::vector<VoxelIndex> out;
    out.reserve(a.size());
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline std::vector<VoxelIndex> mask_intersection(const std::vector<VoxelIndex>& a, const std::vector<VoxelIndex>& b) {
    std::vector<VoxelIndex> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

/// Voxels whose centers lie inside the primitive. Degenerate primitives give an empty mask.
inline StructureMask rasterize_primitive(const Primitive& prim, const VoxelGrid& grid) {
    StructureMask mask;
    if (!has_positive_dimensions(prim)) return mask;

    const Vec3 c = primitive_center(prim);
    const double r = std::visit(detail::BoundingRadius{}, prim);
    std::array<int, 3> lo{}, hi{};
    const double cc[3] = {c.x, c.y, c.z};
    const double org[3] = {grid.origin.x, grid.origin.y, grid.origin.z};
    const double sp[3] = {grid.spacing.x, grid.spacing.y, grid.spacing.z};
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor((cc[a] - r - org[a]) / sp[a])));
        hi[a] = std::min(grid.dims[a] - 1, static_cast<int>(std::ceil((cc[a] + r - org[a]) / sp[a])));
        if (lo[a] > hi[a]) return mask;
    }
    // k outermost so indices come out sorted.
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i)
                if (contains(prim, grid.center(i, j, k)))
                    mask.voxels.push_back(static_cast<VoxelIndex>(grid.index(i, j, k)));
    return mask;
}

struct Phantom {
    std::string case_name;
    VoxelGrid grid;
    StructureMask body;
    std::vector<StructureMask> structures;

    const StructureMask* find(std::string_view name) const {
        if (name == body.name) return &body;
        for (const auto& s : structures)
            if (s.name == name) return &s;
        return nullptr;
    }

    const StructureMask& structure(std::string_view name) const {
        if (const auto* s = find(name)) return *s;
        throw ConfigError("phantom '" + case_name + "' has no structure named '" + std::string(name) + "'");
    }

    /// Union of all target structures.
    std::vector<VoxelIndex> target_voxels() const {
        std::vector<VoxelIndex> out;
        for (const auto& s : structures)
            if (s.role == StructureRole::Target) out = mask_union(out, s.voxels);
        return out;
    }

    /// Voxels belonging to any non-body structure.
    std::size_t structure_volume_voxels() const {
        std::vector<VoxelIndex> all;
        for (const auto& s : structures) all = mask_union(all, s.voxels);
        return all.size();
    }
};

// ---------------------------------------------------------------------------
// Case specifications
// ---------------------------------------------------------------------------

struct StructureSpec {
    std::string name;
    StructureRole role = StructureRole::OrganAtRisk;
    std::vector<Primitive> primitives;  // unioned
    std::vector<std::string> subtract;  // earlier structures removed from this one
};

struct CaseSpec {
    std::string case_name;
    std::array<int, 3> dims{48, 48, 48};
    Vec3 spacing{3.0, 3.0, 3.0};
    Primitive body = Ellipsoid{{}, {66.0, 54.0, 200.0}};
    std::vector<StructureSpec> structures;
};

inline constexpr std::array<std::string_view, 4> kCaseNames{"multi_ptv", "head_neck", "prostate", "icm_prostate"};

inline bool is_known_case(std::string_view name) {
    return std::find(kCaseNames.begin(), kCaseNames.end(), name) != kCaseNames.end();
}

inline void validate(const CaseSpec& spec) {
    if (!is_known_case(spec.case_name)) throw ConfigError("unknown case_name '" + spec.case_name + "'");
    VoxelGrid::centered(spec.dims, spec.spacing); // validates dims/spacing
    if (!has_positive_dimensions(spec.body)) throw ConfigError("body primitive must have positive dimensions");
    std::set<std::string> seen;
    for (const auto& s : spec.structures) {
        if (s.name.empty() || s.name == "body") throw ConfigError("invalid structure name '" + s.name + "'");
        if (!seen.insert(s.name).second) throw ConfigError("duplicate structure name '" + s.name + "'");
        if (s.primitives.empty()) throw ConfigError("structure '" + s.name + "' has no primitives");
        for (const auto& p : s.primitives)
            if (!has_positive_dimensions(p))
                throw ConfigError("structure '" + s.name + "' has a primitive with non-positive dimensions");
        for (const auto& sub : s.subtract)
            if (!seen.count(sub) || sub == s.name)
                throw ConfigError("structure '" + s.name + "' subtracts unknown or later structure '" + sub + "'");
    }
}

/// Deterministically rasterizes every structure; the body is the enclosing
/// primitive unioned with all structures.
inline Phantom build_case(const CaseSpec& spec) {
    validate(spec);
    Phantom ph;
    ph.case_name = spec.case_name;
    ph.grid = VoxelGrid::centered(spec.dims, spec.spacing);
    ph.body = rasterize_primitive(spec.body, ph.grid);
    ph.body.name = "body";
    for (const auto& s : spec.structures) {
        StructureMask m;
        m.name = s.name;
        m.role = s.role;
        for (const auto& p : s.primitives) m.voxels = mask_union(m.voxels, rasterize_primitive(p, ph.grid).voxels);
        for (const auto& sub : s.subtract) m.voxels = mask_difference(m.voxels, ph.structure(sub).voxels);
        ph.body.voxels = mask_union(ph.body.voxels, m.voxels);
        ph.structures.push_back(std::move(m));
    }
    return ph;
}

namespace detail {

inline CaseSpec prostate_geometry(std::string name, double scale, std::array<int, 3> dims) {
    CaseSpec spec;
    spec.case_name = std::move(name);
    spec.dims = dims;
    spec.body = scaled(Ellipsoid{{}, {66.0, 54.0, 200.0}}, scale);
    // +y is posterior, +z superior.
    spec.structures = {
        {"bladder", StructureRole::OrganAtRisk, {scaled(Sphere{{0.0, -38.0, 10.0}, 30.0}, scale)}, {}},
        {"rectum", StructureRole::OrganAtRisk, {scaled(Ellipsoid{{0.0, 22.5, 0.0}, {7.5, 7.5, 15.0}}, scale)}, {}},
        {"ptv", StructureRole::Target, {scaled(Ellipsoid{{}, {20.0, 15.0, 15.0}}, scale)}, {"bladder", "rectum"}},
    };
    return spec;
}

} // namespace detail

/// Shipped geometry for one of the four benchmark cases.
inline CaseSpec builtin_case_spec(std::string_view name) {
    if (name == "multi_ptv") {
        CaseSpec spec;
        spec.case_name = "multi_ptv";
        spec.structures = {
            {"ptv_central", StructureRole::Target, {Cylinder{{0.0, 0.0, 0.0}, 20.0, 40.0}}, {}},
            {"ptv_superior", StructureRole::Target, {Cylinder{{0.0, 0.0, 40.0}, 10.0, 20.0}}, {}},
            {"ptv_inferior", StructureRole::Target, {Cylinder{{0.0, 0.0, -40.0}, 10.0, 20.0}}, {}},
        };
        return spec;
    }
    if (name == "head_neck") {
        CaseSpec spec;
        spec.case_name = "head_neck";
        spec.structures = {
            {"cord", StructureRole::OrganAtRisk, {Cylinder{{0.0, 0.0, 0.0}, 10.0, 400.0}}, {}},
            {"ptv", StructureRole::Target, {Shell{{0.0, 0.0, 0.0}, 15.0, 35.0, 60.0, {0.0, 0.0, 1.0}, {0.0, -1.0, 0.0}}}, {"cord"}},
        };
        return spec;
    }
    if (name == "prostate") return detail::prostate_geometry("prostate", 1.0, {48, 48, 48});
    if (name == "icm_prostate") return detail::prostate_geometry("icm_prostate", 1.5, {64, 64, 64});
    throw ConfigError("unknown case_name '" + std::string(name) + "'");
}

inline Phantom build_builtin_case(std::string_view name) { return build_case(builtin_case_spec(name)); }

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }
inline void from_json(const nlohmann::json& j, Vec3& v) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array, got " + j.dump());
    v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void to_json(nlohmann::json& j, const Primitive& prim) {
    std::visit(
        [&j](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Sphere>) j = {{"type", "sphere"}, {"center", s.center}, {"radius", s.radius}};
            else if constexpr (std::is_same_v<T, Ellipsoid>)
                j = {{"type", "ellipsoid"}, {"center", s.center}, {"semi_axes", s.semi_axes}};
            else if constexpr (std::is_same_v<T, Cylinder>)
                j = {{"type", "cylinder"}, {"center", s.center}, {"radius", s.radius}, {"length", s.length}, {"axis", s.axis}};
            else
                j = {{"type", "shell"},           {"center", s.center}, {"inner_radius", s.inner_radius},
                     {"outer_radius", s.outer_radius}, {"length", s.length}, {"axis", s.axis},
                     {"opening", s.opening}};
        },
        prim);
}

inline void from_json(const nlohmann::json& j, Primitive& prim) {
    const auto type = j.at("type").get<std::string>();
    if (type == "sphere") prim = Sphere{j.at("center").get<Vec3>(), j.at("radius").get<double>()};
    else if (type == "ellipsoid") prim = Ellipsoid{j.at("center").get<Vec3>(), j.at("semi_axes").get<Vec3>()};
    else if (type == "cylinder")
        prim = Cylinder{j.at("center").get<Vec3>(), j.at("radius").get<double>(), j.at("length").get<double>(),
                        j.value("axis", Vec3{0.0, 0.0, 1.0})};
    else if (type == "shell")
        prim = Shell{j.at("center").get<Vec3>(),          j.at("inner_radius").get<double>(),
                     j.at("outer_radius").get<double>(),   j.at("length").get<double>(),
                     j.value("axis", Vec3{0.0, 0.0, 1.0}), j.value("opening", Vec3{})};
    else throw ConfigError("unknown primitive type '" + type + "'");
}

inline void to_json(nlohmann::json& j, const StructureSpec& s) {
    j = {{"name", s.name},
         {"role", s.role == StructureRole::Target ? "target" : "oar"},
         {"primitives", s.primitives},
         {"subtract", s.subtract}};
}

inline void from_json(const nlohmann::json& j, StructureSpec& s) {
    s.name = j.at("name").get<std::string>();
    const auto role = j.value("role", std::string("oar"));
    if (role == "target") s.role = StructureRole::Target;
    else if (role == "oar") s.role = StructureRole::OrganAtRisk;
    else throw ConfigError("structure '" + s.name + "': role must be 'target' or 'oar'");
    s.primitives = j.at("primitives").get<std::vector<Primitive>>();
    s.subtract = j.value("subtract", std::vector<std::string>{});
}

inline void to_json(nlohmann::json& j, const CaseSpec& c) {
    j = {{"case_name", c.case_name}, {"dims", c.dims},        {"spacing", c.spacing},
         {"body", c.body},           {"structures", c.structures}};
}

inline void from_json(const nlohmann::json& j, CaseSpec& c) {
    c.case_name = j.at("case_name").get<std::string>();
    c.dims = j.value("dims", std::array<int, 3>{48, 48, 48});
    c.spacing = j.value("spacing", Vec3{3.0, 3.0, 3.0});
    if (j.contains("body")) c.body = j.at("body").get<Primitive>();
    c.structures = j.at("structures").get<std::vector<StructureSpec>>();
}

} // namespace fmo
