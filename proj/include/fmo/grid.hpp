#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>

#include "fmo/error.hpp"

namespace fmo {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr bool operator==(const Vec3&) const = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
    const double n = norm(a);
    return n > 0.0 ? a * (1.0 / n) : a;
}

using VoxelIndex = std::uint32_t;

/// Regular voxel grid. Voxel (i, j, k) has its center at origin + (i, j, k) * spacing
/// and linear index i + nx * (j + ny * k).
struct VoxelGrid {
    std::array<int, 3> dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};

    /// Grid whose voxel centers are symmetric about the world origin.
    static VoxelGrid centered(std::array<int, 3> dims, Vec3 spacing) {
        VoxelGrid g{dims, spacing, {}};
        g.origin = {-0.5 * (dims[0] - 1) * spacing.x, -0.5 * (dims[1] - 1) * spacing.y,
                    -0.5 * (dims[2] - 1) * spacing.z};
        g.validate();
        return g;
    }

    void validate() const {
        if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
            throw ConfigError("grid dims must all be >= 1");
        if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0))
            throw ConfigError("grid spacing must be positive");
    }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    double voxel_volume() const { return spacing.x * spacing.y * spacing.z; }
    double min_spacing() const { return std::min({spacing.x, spacing.y, spacing.z}); }

    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
    }

    std::array<int, 3> ijk(std::size_t idx) const {
        const auto nx = static_cast<std::size_t>(dims[0]);
        const auto ny = static_cast<std::size_t>(dims[1]);
        return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
    }

    Vec3 center(int i, int j, int k) const {
        return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
    }
    Vec3 center(std::size_t idx) const {
        const auto [i, j, k] = ijk(idx);
        return center(i, j, k);
    }

    /// Voxel containing p (nearest center), or false when p lies outside the grid.
    bool locate(const Vec3& p, std::array<int, 3>& out) const {
        const double f[3] = {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y,
                             (p.z - origin.z) / spacing.z};
        for (int a = 0; a < 3; ++a) {
            const double r = std::floor(f[a] + 0.5);
            if (r < 0.0 || r > dims[a] - 1) return false;
            out[a] = static_cast<int>(r);
        }
        return true;
    }

    /// Axis-aligned bounds of the grid (voxel faces, not centers).
    Vec3 lower_bound() const { return origin - spacing * 0.5; }
    Vec3 upper_bound() const {
        return origin + Vec3{(dims[0] - 0.5) * spacing.x, (dims[1] - 0.5) * spacing.y, (dims[2] - 0.5) * spacing.z};
    }

    bool operator==(const VoxelGrid&) const = default;
};

} // namespace fmo
