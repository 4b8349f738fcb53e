#pragma once

#include "ftn/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace ftn {

/// Row-major dense matrix. Batch matrices keep one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Contiguous row-major tensor of arbitrary order.
///
/// The last mode is the fastest-varying one; `unfolding()` views the tensor as
/// a (product of leading modes) x (last mode) matrix. For a core of shape
/// r_L x r_R x r_t this is the (r_L r_R) x r_t matricization.
class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {
        for (auto s : shape_) {
            if (s == 0) throw DimensionError("DenseTensor: zero-sized mode");
        }
    }

    DenseTensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw DimensionError("DenseTensor: data length does not match shape");
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
    std::size_t order() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator()(std::size_t a, std::size_t b, std::size_t c) {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }
    double operator()(std::size_t a, std::size_t b, std::size_t c) const {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    std::size_t unfolding_rows() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
    std::size_t unfolding_cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    MatrixMap unfolding() {
        return MatrixMap(data_.data(), static_cast<Eigen::Index>(unfolding_rows()),
                         static_cast<Eigen::Index>(unfolding_cols()));
    }
    ConstMatrixMap unfolding() const {
        return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(unfolding_rows()),
                              static_cast<Eigen::Index>(unfolding_cols()));
    }

    bool same_shape(const DenseTensor& other) const noexcept { return shape_ == other.shape_; }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void set_zero() noexcept { std::fill(data_.begin(), data_.end(), 0.0); }

    DenseTensor& operator+=(const DenseTensor& o) {
        detail::require_dims(same_shape(o), "DenseTensor +=: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    DenseTensor& operator-=(const DenseTensor& o) {
        detail::require_dims(same_shape(o), "DenseTensor -=: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    DenseTensor& operator*=(double a) noexcept {
        for (double& v : data_) v *= a;
        return *this;
    }

    double dot(const DenseTensor& o) const {
        detail::require_dims(same_shape(o), "DenseTensor dot: shape mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i) s += data_[i] * o.data_[i];
        return s;
    }

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        if (shape.empty()) return 0;
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Row-wise Kronecker product: row i of the result is kron(U.row(i), V.row(i)).
inline Matrix khatri_rao(const Eigen::Ref<const Matrix>& U, const Eigen::Ref<const Matrix>& V) {
    detail::require_dims(U.rows() == V.rows(), "khatri_rao: row-count mismatch");
    const Eigen::Index p = U.cols(), q = V.cols();
    Matrix out(U.rows(), p * q);
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
        for (Eigen::Index a = 0; a < p; ++a) {
            out.row(i).segment(a * q, q) = U(i, a) * V.row(i);
        }
    }
    return out;
}

/// Matricized tensor times Khatri-Rao product for a core of shape r_L x r_R x r_t.
///
/// Row i of the result is unfolding(core)^T kron(U[i], V[i]).
inline Matrix mttkrp(const DenseTensor& core, const Eigen::Ref<const Matrix>& U,
                     const Eigen::Ref<const Matrix>& V) {
    detail::require_dims(core.order() == 3, "mttkrp: core must be third order");
    detail::require_dims(U.rows() == V.rows(), "mttkrp: row-count mismatch");
    detail::require_dims(static_cast<std::size_t>(U.cols()) == core.dim(0) &&
                             static_cast<std::size_t>(V.cols()) == core.dim(1),
                         "mttkrp: factor widths do not match core shape");
    return khatri_rao(U, V) * core.unfolding();
}

struct ThinQr {
    Matrix q;
    Matrix r;
};

/// Householder thin QR with the diagonal of R made nonnegative.
///
/// Rank-deficient input gives (numerically) zero diagonal entries in R while
/// Q keeps orthonormal columns.
inline ThinQr thin_qr(const Eigen::Ref<const Matrix>& M) {
    const Eigen::Index n = M.rows(), r = M.cols();
    if (n < r) throw DimensionError("thin_qr: more columns than rows");
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
    ThinQr out;
    out.q = qr.householderQ() * Eigen::MatrixXd::Identity(n, r);
    out.r = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    for (Eigen::Index k = 0; k < r; ++k) {
        if (out.r(k, k) < 0.0) {
            out.r.row(k) *= -1.0;
            out.q.col(k) *= -1.0;
        }
    }
    return out;
}

}  // namespace ftn
