#pragma once

#include "ftn/error.hpp"
#include "ftn/rng.hpp"
#include "ftn/tensor_kernels.hpp"
#include "ftn/ttn_model.hpp"

#include <cmath>
#include <string>
#include <string_view>

namespace ftn {

enum class FeatureKind { monomial, legendre, hermite, normalized_affine };

/// Univariate basis used for every mode.
///
/// legendre is orthonormal for the uniform probability measure on [-1, 1]
/// (sqrt(2k+1) P_k). hermite is the probabilists' He_k, optionally divided by
/// sqrt(k!). normalized_affine is (1, x) / |(1, x)|.
struct FeatureFamily {
    FeatureKind kind = FeatureKind::monomial;
    std::size_t degree = 1;
    bool normalized = false;

    std::size_t dim() const noexcept { return kind == FeatureKind::normalized_affine ? 2 : degree + 1; }
    bool polynomial() const noexcept { return kind != FeatureKind::normalized_affine; }
};

inline std::string to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::monomial: return "monomial";
        case FeatureKind::legendre: return "legendre";
        case FeatureKind::hermite: return "hermite";
        case FeatureKind::normalized_affine: return "normalized-affine";
    }
    return "?";
}

inline FeatureKind parse_feature_kind(std::string_view name) {
    if (name == "monomial") return FeatureKind::monomial;
    if (name == "legendre") return FeatureKind::legendre;
    if (name == "hermite") return FeatureKind::hermite;
    if (name == "normalized-affine" || name == "affine") return FeatureKind::normalized_affine;
    throw ConfigError("unknown feature family '" + std::string(name) + "'");
}

/// Writes the n basis values at x into out[0..n).
template <class Out>
void eval_basis(const FeatureFamily& f, double x, Out&& out) {
    const std::size_t n = f.dim();
    switch (f.kind) {
        case FeatureKind::monomial: {
            double p = 1.0;
            for (std::size_t k = 0; k < n; ++k) {
                out[k] = p;
                p *= x;
            }
            break;
        }
        case FeatureKind::legendre: {
            double prev = 0.0, cur = 1.0;
            for (std::size_t k = 0; k < n; ++k) {
                out[k] = std::sqrt(2.0 * static_cast<double>(k) + 1.0) * cur;
                const double kk = static_cast<double>(k);
                const double next = ((2.0 * kk + 1.0) * x * cur - kk * prev) / (kk + 1.0);
                prev = cur;
                cur = next;
            }
            break;
        }
        case FeatureKind::hermite: {
            double prev = 0.0, cur = 1.0, fact = 1.0;
            for (std::size_t k = 0; k < n; ++k) {
                if (k > 0) fact *= static_cast<double>(k);
                out[k] = f.normalized ? cur / std::sqrt(fact) : cur;
                const double next = x * cur - static_cast<double>(k) * prev;
                prev = cur;
                cur = next;
            }
            break;
        }
        case FeatureKind::normalized_affine: {
            const double s = 1.0 / std::sqrt(1.0 + x * x);
            out[0] = s;
            out[1] = x * s;
            break;
        }
    }
}

/// Evaluates the family on every column of `samples` (m x d).
inline FeatureBatch eval_features(const FeatureFamily& family, const Eigen::Ref<const Matrix>& samples) {
    FeatureBatch batch;
    const auto n = static_cast<Eigen::Index>(family.dim());
    for (Eigen::Index v = 0; v < samples.cols(); ++v) {
        Matrix phi(samples.rows(), n);
        for (Eigen::Index i = 0; i < samples.rows(); ++i) eval_basis(family, samples(i, v), phi.row(i));
        batch.modes.push_back(std::move(phi));
    }
    return batch;
}

/// Coefficients C with phi_j(x) = sum_p C(j, p) x^p for polynomial families.
inline Matrix monomial_coefficients(const FeatureFamily& family) {
    if (!family.polynomial())
        throw ConfigError("monomial_coefficients: " + to_string(family.kind) + " is not a polynomial family");
    const auto n = static_cast<Eigen::Index>(family.dim());
    Matrix C = Matrix::Zero(n, n);
    switch (family.kind) {
        case FeatureKind::monomial:
            C.setIdentity();
            break;
        case FeatureKind::legendre:
        case FeatureKind::hermite: {
            // Three-term recurrences on coefficient rows of the raw polynomials.
            Matrix raw = Matrix::Zero(n, n);
            raw(0, 0) = 1.0;
            for (Eigen::Index k = 0; k + 1 < n; ++k) {
                const double kk = static_cast<double>(k);
                Vector shifted = Vector::Zero(n);
                shifted.tail(n - 1) = raw.row(k).head(n - 1).transpose();
                Vector prev = k > 0 ? Vector(raw.row(k - 1).transpose()) : Vector::Zero(n);
                if (family.kind == FeatureKind::legendre)
                    raw.row(k + 1) = (((2.0 * kk + 1.0) * shifted - kk * prev) / (kk + 1.0)).transpose();
                else
                    raw.row(k + 1) = (shifted - kk * prev).transpose();
            }
            double fact = 1.0;
            for (Eigen::Index k = 0; k < n; ++k) {
                if (k > 0) fact *= static_cast<double>(k);
                double s = 1.0;
                if (family.kind == FeatureKind::legendre) s = std::sqrt(2.0 * static_cast<double>(k) + 1.0);
                else if (family.normalized) s = 1.0 / std::sqrt(fact);
                C.row(k) = s * raw.row(k);
            }
            break;
        }
        case FeatureKind::normalized_affine:
            break;
    }
    return C;
}

enum class Measure { uniform_pm1 };

/// Gram matrix int phi_j phi_k dQ from closed-form monomial moments.
inline Matrix gram_matrix(const FeatureFamily& family, Measure measure = Measure::uniform_pm1) {
    if (!family.polynomial() || measure != Measure::uniform_pm1)
        throw ConfigError("gram_matrix: unsupported family/measure pair");
    const auto n = static_cast<Eigen::Index>(family.dim());
    Matrix moments(n, n);
    for (Eigen::Index p = 0; p < n; ++p)
        for (Eigen::Index q = 0; q < n; ++q)
            moments(p, q) = ((p + q) % 2 == 0) ? 1.0 / static_cast<double>(p + q + 1) : 0.0;
    const Matrix C = monomial_coefficients(family);
    return C * moments * C.transpose();
}

/// M with Phi_from = M Phi_to, for change_of_basis from `from` to `to`.
inline Matrix basis_transform(const FeatureFamily& from, const FeatureFamily& to) {
    detail::require_dims(from.dim() == to.dim(), "basis_transform: families differ in dimension");
    const Matrix cf = monomial_coefficients(from);
    const Matrix ct = monomial_coefficients(to);
    return cf * ct.inverse();
}

/// `count` samples drawn uniformly from [lo, hi]^d and evaluated by the family.
inline FeatureBatch probe_batch(const FeatureFamily& family, std::size_t d, double lo, double hi,
                                std::uint64_t seed, std::size_t count = 64) {
    Rng rng(seed);
    Matrix x(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index v = 0; v < x.cols(); ++v) x(i, v) = rng.uniform(lo, hi);
    return eval_features(family, x);
}

}  // namespace ftn
