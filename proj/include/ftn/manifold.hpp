#pragma once

#include "ftn/error.hpp"
#include "ftn/ttn_model.hpp"

#include <cmath>

namespace ftn {

/// Euclidean inner product on the Cartesian product of core spaces.
inline double inner(const TangentTuple& xi, const TangentTuple& eta) {
    detail::require_dims(xi.same_shape(eta), "inner: shape mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < xi.size(); ++k) s += xi[k].dot(eta[k]);
    return s;
}

inline double norm(const TangentTuple& xi) { return std::sqrt(inner(xi, xi)); }

namespace detail {
inline void check_tangent(const TtnParams& params, const TangentTuple& t, const char* who) {
    require_dims(t.size() == params.node_count(), std::string(who) + ": node count mismatch");
    for (std::size_t k = 0; k < t.size(); ++k)
        require_dims(t[k].shape() == params.core(k).shape(), std::string(who) + ": block shape mismatch");
}
}  // namespace detail

/// Removes the vertical part A_t (A_t^T dA_t) of every non-root block.
///
/// The result satisfies A_t^T dA_t = 0; the root block is left unchanged.
inline TangentTuple horizontal_project(const TtnParams& params, TangentTuple tangent) {
    detail::check_tangent(params, tangent, "horizontal_project");
    for (std::size_t k = 0; k + 1 < params.node_count(); ++k) {
        const auto A = params.core(k).unfolding();
        auto D = tangent[k].unfolding();
        const Matrix coeff = A.transpose() * D;
        D.noalias() -= A * coeff;
    }
    return tangent;
}

/// Vector transport: projection onto the horizontal space at the new point.
inline TangentTuple transport(const TtnParams& new_params, TangentTuple tangent) {
    return horizontal_project(new_params, std::move(tangent));
}

/// QR-based retraction of params + step * direction.
///
/// Bottom-up: each non-root core plus its scaled perturbation (with the R
/// factors of its children already absorbed) is QR factorized; Q becomes the
/// new core and R moves into the parent. The root takes the additive update
/// with all absorbed factors. The represented function is tau(A + step dA).
inline TtnParams qr_retract(const TtnParams& params, const TangentTuple& direction, double step) {
    detail::check_tangent(params, direction, "qr_retract");
    std::vector<DenseTensor> cores = params.cores();
    for (std::size_t k = 0; k < cores.size(); ++k) {
        auto* c = cores[k].data();
        const auto* d = direction[k].data();
        for (std::size_t i = 0; i < cores[k].size(); ++i) c[i] += step * d[i];
    }
    detail::orthonormalize_sweep(cores, params.topology());
    if (!cores.back().all_finite()) throw NumericalError("qr_retract: non-finite root core");
    return TtnParams(params.topology(), std::move(cores));
}

}  // namespace ftn
