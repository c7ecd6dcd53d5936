#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "fmo/error.hpp"

namespace fmo {

using Vector = Eigen::VectorXd;

struct Triplet {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    double value = 0.0;
};

/// Sparse voxel-by-bixel dose-influence matrix in compressed row (voxel-major)
/// storage. Values are dose in Gy per unit fluence and are never negative.
class DoseInfluenceMatrix {
public:
    DoseInfluenceMatrix() = default;

    /// Builds from unordered triplets; rejects negative values, out-of-range
    /// indices and duplicate (row, col) entries.
    static DoseInfluenceMatrix from_triplets(std::size_t n_rows, std::size_t n_cols, std::vector<Triplet> entries) {
        std::sort(entries.begin(), entries.end(),
                  [](const Triplet& a, const Triplet& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
        DoseInfluenceMatrix m;
        m.n_rows_ = n_rows;
        m.n_cols_ = n_cols;
        m.row_ptr_.assign(n_rows + 1, 0);
        m.cols_.reserve(entries.size());
        m.values_.reserve(entries.size());
        for (std::size_t k = 0; k < entries.size(); ++k) {
            const auto& t = entries[k];
            if (t.row >= n_rows || t.col >= n_cols) throw DimensionError("triplet index out of range");
            if (!(t.value >= 0.0)) throw ConfigError("dose-influence entries must be non-negative and finite");
            if (k > 0 && entries[k - 1].row == t.row && entries[k - 1].col == t.col)
                throw ConfigError("duplicate dose-influence entry (" + std::to_string(t.row) + ", " +
                                  std::to_string(t.col) + ")");
            ++m.row_ptr_[t.row + 1];
            m.cols_.push_back(static_cast<std::uint32_t>(t.col));
            m.values_.push_back(t.value);
        }
        for (std::size_t r = 0; r < n_rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
        return m;
    }

    static DoseInfluenceMatrix from_dense(const Eigen::MatrixXd& dense) {
        std::vector<Triplet> t;
        for (Eigen::Index r = 0; r < dense.rows(); ++r)
            for (Eigen::Index c = 0; c < dense.cols(); ++c)
                if (dense(r, c) != 0.0)
                    t.push_back({static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c), dense(r, c)});
        return from_triplets(static_cast<std::size_t>(dense.rows()), static_cast<std::size_t>(dense.cols()), std::move(t));
    }

    std::size_t n_voxels() const { return n_rows_; }
    std::size_t n_bixels() const { return n_cols_; }
    std::size_t nnz() const { return values_.size(); }

    const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
    const std::vector<std::uint32_t>& cols() const { return cols_; }
    const std::vector<double>& values() const { return values_; }

    /// y = L x
    Vector apply(const Vector& x) const {
        check_size(x, n_cols_, "apply");
        Vector y(static_cast<Eigen::Index>(n_rows_));
        for (std::size_t r = 0; r < n_rows_; ++r) {
            double acc = 0.0;
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) acc += values_[k] * x[cols_[k]];
            y[static_cast<Eigen::Index>(r)] = acc;
        }
        return y;
    }

    /// y = L^T v, traversing the same row storage.
    Vector apply_transpose(const Vector& v) const {
        check_size(v, n_rows_, "apply_transpose");
        Vector y = Vector::Zero(static_cast<Eigen::Index>(n_cols_));
        for (std::size_t r = 0; r < n_rows_; ++r) {
            const double vr = v[static_cast<Eigen::Index>(r)];
            if (vr == 0.0) continue;
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) y[cols_[k]] += values_[k] * vr;
        }
        return y;
    }

    Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows_), static_cast<Eigen::Index>(n_cols_));
        for (std::size_t r = 0; r < n_rows_; ++r)
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) d(static_cast<Eigen::Index>(r), cols_[k]) = values_[k];
        return d;
    }

    std::vector<Triplet> triplets() const {
        std::vector<Triplet> out;
        out.reserve(nnz());
        for (std::size_t r = 0; r < n_rows_; ++r)
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.push_back({r, cols_[k], values_[k]});
        return out;
    }

    bool operator==(const DoseInfluenceMatrix&) const = default;

private:
    static void check_size(const Vector& x, std::size_t expected, const char* what) {
        if (static_cast<std::size_t>(x.size()) != expected)
            throw DimensionError(std::string(what) + ": vector length " + std::to_string(x.size()) + ", expected " +
                                 std::to_string(expected));
    }

    std::size_t n_rows_ = 0;
    std::size_t n_cols_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::uint32_t> cols_;
    std::vector<double> values_;
};

/// d = L |b|
inline Vector dose_from_fluence(const DoseInfluenceMatrix& L, const Vector& b) {
    if (static_cast<std::size_t>(b.size()) != L.n_bixels())
        throw DimensionError("fluence length " + std::to_string(b.size()) + " != n_bixels " +
                             std::to_string(L.n_bixels()));
    return L.apply(b.cwiseAbs());
}

/// L^T v
inline Vector adjoint_apply(const DoseInfluenceMatrix& L, const Vector& v) {
    if (static_cast<std::size_t>(v.size()) != L.n_voxels())
        throw DimensionError("dose-space vector length " + std::to_string(v.size()) + " != n_voxels " +
                             std::to_string(L.n_voxels()));
    return L.apply_transpose(v);
}

// ---------------------------------------------------------------------------
// Binary triplet file: u64 n_voxels, u64 n_bixels, u64 nnz, then nnz records of
// (u64 row, u64 col, f64 value). Little-endian throughout.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(sizeof(T) == 8);
    std::uint64_t bits = 0;
    std::memcpy(&bits, &value, 8);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}

template <typename T>
T read_le(std::istream& is) {
    static_assert(sizeof(T) == 8);
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw ConfigError("truncated dose-influence matrix file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
}

} // namespace detail

inline void write_triplet_file(const DoseInfluenceMatrix& L, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    detail::write_le<std::uint64_t>(os, L.n_voxels());
    detail::write_le<std::uint64_t>(os, L.n_bixels());
    detail::write_le<std::uint64_t>(os, L.nnz());
    for (const auto& t : L.triplets()) {
        detail::write_le(os, t.row);
        detail::write_le(os, t.col);
        detail::write_le(os, t.value);
    }
    if (!os) throw ConfigError("failed writing '" + path + "'");
}

inline DoseInfluenceMatrix read_triplet_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    const auto n_rows = detail::read_le<std::uint64_t>(is);
    const auto n_cols = detail::read_le<std::uint64_t>(is);
    const auto nnz = detail::read_le<std::uint64_t>(is);
    std::vector<Triplet> t(nnz);
    for (auto& e : t) {
        e.row = detail::read_le<std::uint64_t>(is);
        e.col = detail::read_le<std::uint64_t>(is);
        e.value = detail::read_le<double>(is);
    }
    return DoseInfluenceMatrix::from_triplets(n_rows, n_cols, std::move(t));
}

} // namespace fmo
