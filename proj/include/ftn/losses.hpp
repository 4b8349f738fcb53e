#pragma once

#include "ftn/error.hpp"
#include "ftn/rng.hpp"
#include "ftn/tensor_kernels.hpp"

#include <cmath>
#include <string>
#include <string_view>

namespace ftn {

enum class LossKind { least_squares, multinomial_logistic };

inline std::string to_string(LossKind k) {
    return k == LossKind::least_squares ? "least-squares" : "multinomial-logistic";
}

inline LossKind parse_loss_kind(std::string_view s) {
    if (s == "least-squares" || s == "ls") return LossKind::least_squares;
    if (s == "multinomial-logistic" || s == "logistic") return LossKind::multinomial_logistic;
    throw ConfigError("unknown loss '" + std::string(s) + "'");
}

/// Softmax with max-subtraction.
inline Vector softmax(const Eigen::Ref<const Vector>& z) {
    const double shift = z.maxCoeff();
    Vector p = (z.array() - shift).exp().matrix();
    p /= p.sum();
    return p;
}

struct LossResult {
    double loss = 0.0;
    Matrix cotangents;  ///< per-sample gradient of the loss w.r.t. the model output
};

/// Empirical loss (mean over rows) and per-sample output-space gradients.
///
/// least squares: l = |f - y|^2, v = 2 (f - y).
/// logistic: l = -sum_j y_j log softmax(f)_j, v = softmax(f) - y.
inline LossResult loss_and_cotangents(LossKind kind, const Eigen::Ref<const Matrix>& outputs,
                                      const Eigen::Ref<const Matrix>& targets) {
    detail::require_dims(outputs.rows() == targets.rows() && outputs.cols() == targets.cols(),
                         "loss_and_cotangents: outputs and targets differ in shape");
    const auto m = outputs.rows();
    LossResult res;
    res.cotangents.resize(m, outputs.cols());
    double total = 0.0;
    if (kind == LossKind::least_squares) {
        res.cotangents = outputs - targets;
        total = res.cotangents.squaredNorm();
        res.cotangents *= 2.0;
    } else {
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto y = targets.row(i);
            Eigen::Index label = -1;
            for (Eigen::Index j = 0; j < y.size(); ++j) {
                if (y(j) == 1.0 && label < 0) label = j;
                else if (y(j) != 0.0) label = -2;
            }
            if (label < 0) throw DimensionError("logistic targets must be one-hot (row " + std::to_string(i) + ")");
            const Vector z = outputs.row(i).transpose();
            const double shift = z.maxCoeff();
            const double lse = shift + std::log((z.array() - shift).exp().sum());
            total += lse - z(label);
            res.cotangents.row(i) = softmax(z).transpose() - y;
        }
    }
    res.loss = m > 0 ? total / static_cast<double>(m) : 0.0;
    return res;
}

/// Loss value only.
inline double loss_value(LossKind kind, const Eigen::Ref<const Matrix>& outputs,
                         const Eigen::Ref<const Matrix>& targets) {
    return loss_and_cotangents(kind, outputs, targets).loss;
}

/// Columns w_j with sum_j w_j w_j^T equal to the output-space weight matrix:
/// the identity for least squares and C(z) = diag(p) - p p^T for logistic.
inline Matrix gn_weight_factors(LossKind kind, const Eigen::Ref<const Vector>& z) {
    const auto n = z.size();
    if (kind == LossKind::least_squares) return Matrix::Identity(n, n);
    const Vector p = softmax(z);
    Matrix w(n, n);
    // (D sigma)_{:,j} / sqrt(p_j) = sqrt(p_j) (e_j - p)
    for (Eigen::Index j = 0; j < n; ++j) {
        w.col(j) = -std::sqrt(p(j)) * p;
        w(j, j) += std::sqrt(p(j));
    }
    return w;
}

/// C(z) = diag(p) - p p^T.
inline Matrix fisher_output_matrix(const Eigen::Ref<const Vector>& z) {
    const Vector p = softmax(z);
    Matrix c = -p * p.transpose();
    c.diagonal() += p;
    return c;
}

/// One-shot factor for class k: e_k - softmax(z).
inline Vector one_shot_weight_factor(const Eigen::Ref<const Vector>& z, std::size_t k) {
    detail::require_dims(k < static_cast<std::size_t>(z.size()), "one_shot_weight_factor: class out of range");
    Vector w = -softmax(z);
    w(static_cast<Eigen::Index>(k)) += 1.0;
    return w;
}

/// Rank-one unbiased surrogate of C(z): w = (D sigma)_{:,k} / sigma_k = e_k - p
/// with k drawn from p = softmax(z), so that E[w w^T] = diag(p) - p p^T.
inline Vector sample_gn_weight_factor(const Eigen::Ref<const Vector>& z, Rng& rng) {
    const Vector p = softmax(z);
    const double u = rng.uniform();
    Eigen::Index k = p.size() - 1;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        acc += p(j);
        if (u < acc) {
            k = j;
            break;
        }
    }
    return one_shot_weight_factor(z, static_cast<std::size_t>(k));
}

}  // namespace ftn
