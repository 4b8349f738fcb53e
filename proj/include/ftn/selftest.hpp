#pragma once

#include "ftn/gauss_newton.hpp"
#include "ftn/manifold.hpp"
#include "ftn/testing/oracles.hpp"
#include "ftn/ttn_model.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ftn {

struct SelftestCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline SelftestCheck make_check(std::string name, double value, double bound, bool upper = true) {
    SelftestCheck c;
    c.name = std::move(name);
    c.passed = std::isfinite(value) && (upper ? value <= bound : value >= bound);
    std::ostringstream os;
    os << "value " << value << (upper ? " <= " : " >= ") << bound;
    c.detail = os.str();
    return c;
}

/// Fitted log-log slope of |F(R(t xi)) - F - t DF[xi]| over t in {1e-2, 1e-3, 1e-4}.
inline double retraction_order(const TtnParams& p, const FeatureBatch& b, const TangentTuple& xi) {
    const Matrix y0 = forward(p, b), d = apply_dtau(p, b, xi);
    const double ts[3] = {1e-2, 1e-3, 1e-4};
    double lx[3], ly[3], mx = 0, my = 0;
    for (int i = 0; i < 3; ++i) {
        lx[i] = std::log(ts[i]);
        ly[i] = std::log((forward(qr_retract(p, xi, ts[i]), b) - y0 - ts[i] * d).norm());
        mx += lx[i] / 3;
        my += ly[i] / 3;
    }
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 3; ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace detail

/// Tiny-instance oracle suite. With `checkpoint`, its Stiefel constraints
/// and outputs are checked as well.
inline std::vector<SelftestCheck> run_selftest(const std::optional<TtnParams>& checkpoint = std::nullopt) {
    std::vector<SelftestCheck> out;
    const auto topo = build_balanced({2, 2, 2, 2}, 2, {2, 2});
    Rng rng(2024);
    const auto batch = oracle::random_batch(topo, 8, rng);
    const auto p = random_init(topo, 7, batch);
    const auto basis = oracle::horizontal_basis(p);

    {
        const Matrix v = oracle::random_matrix(8, 2, rng);
        const auto zeta = oracle::random_tangent(p, rng);
        const double lhs = inner(backprop(p, batch, v, 0.5), zeta);
        const double rhs = 0.5 * v.cwiseProduct(apply_dtau(p, batch, zeta)).sum();
        out.push_back(detail::make_check("adjoint identity", std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)), 1e-10));
        out.push_back(detail::make_check("forward vs dense contraction",
                                         oracle::max_abs(forward(p, batch) - oracle::dense_forward(p, batch)), 1e-12));
    }
    for (auto kind : {LossKind::least_squares, LossKind::multinomial_logistic}) {
        Rng r(5);
        const auto fs = assemble_factors(p, batch, kind, FactorMode::full, r, 5e-3);
        const Matrix dense = oracle::dense_gn(p, batch, kind, 5e-3, basis);
        const Matrix mf = oracle::densify([&](const TangentTuple& z) { return apply(fs, z); }, basis);
        out.push_back(detail::make_check("dense Gauss-Newton equivalence (" + to_string(kind) + ")",
                                         oracle::max_abs(mf - dense), 1e-9));
    }
    {
        const auto xi = horizontal_project(p, oracle::random_tangent(p, rng));
        out.push_back(detail::make_check("retraction order", detail::retraction_order(p, batch, xi), 1.9, false));
        const auto pxi = horizontal_project(p, xi);
        const auto eta = oracle::random_tangent(p, rng);
        out.push_back(detail::make_check("projection idempotent", norm(horizontal_project(p, pxi) - pxi), 1e-12));
        out.push_back(detail::make_check(
            "projection self-adjoint", std::abs(inner(pxi, eta) - inner(xi, horizontal_project(p, eta))), 1e-12));
    }
    {
        const Matrix v = oracle::random_matrix(8, 2, rng);
        double out_err = 0.0, img_err = 0.0;
        for (std::size_t k = 0; k + 1 < p.node_count(); ++k) {
            const auto g = oracle::gauge_transform(p, k, oracle::random_orthogonal(2, rng));
            out_err = std::max(out_err, oracle::max_abs(forward(g, batch) - forward(p, batch)));
            const auto gp = horizontal_project(p, backprop(p, batch, v, 1.0));
            const auto gg = horizontal_project(g, backprop(g, batch, v, 1.0));
            img_err = std::max(img_err, oracle::max_abs(apply_dtau(p, batch, gp) - apply_dtau(g, batch, gg)));
        }
        out.push_back(detail::make_check("gauge invariance of outputs", out_err, 1e-12));
        out.push_back(detail::make_check("gauge invariance of gradient images", img_err, 1e-10));
    }
    if (checkpoint) {
        out.push_back(detail::make_check("checkpoint Stiefel invariants", checkpoint->stiefel_defect(), 1e-10));
        bool finite = true;
        for (const auto& c : checkpoint->cores()) finite = finite && c.all_finite();
        out.push_back(detail::make_check("checkpoint cores finite", finite ? 0.0 : 1.0, 0.0));
    }
    return out;
}

}  // namespace ftn
