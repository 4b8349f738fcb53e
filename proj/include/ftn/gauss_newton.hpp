#pragma once

#include "ftn/error.hpp"
#include "ftn/losses.hpp"
#include "ftn/manifold.hpp"
#include "ftn/parallel.hpp"
#include "ftn/rng.hpp"
#include "ftn/ttn_model.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace ftn {

enum class FactorMode { full, one_shot };

/// Matrix-free empirical Gauss-Newton operator
///
///   A(zeta) = (1/m) sum_{i,j} xi_ij <xi_ij, zeta> + lambda zeta.
///
/// Every factor xi_ij is the horizontal projection of the single-sample
/// backpropagation of a weight vector w_ij, so its block at node k is the
/// rank-one matrix a_ik b_ijk^T: a_ik is the projected Khatri-Rao input row
/// of sample i and b_ijk the cotangent reaching node k. Both are stored per
/// node and the factors themselves are never materialized.
class GnFactorSet {
public:
    GnFactorSet() = default;

    const TtnParams& base() const noexcept { return params_; }
    std::size_t sample_count() const noexcept { return m_; }
    /// Factors per sample: n_0 in full mode, 1 in one-shot mode.
    std::size_t fan() const noexcept { return fan_; }
    std::size_t factor_count() const noexcept { return m_ * fan_; }
    double lambda() const noexcept { return lambda_; }
    void set_lambda(double lambda) {
        if (!(lambda >= 0.0)) throw ConfigError("regularization must be non-negative");
        lambda_ = lambda;
    }

    /// Materialized factor xi_ij (for tests and diagnostics).
    TangentTuple factor(std::size_t i, std::size_t j) const {
        detail::require_dims(i < m_ && j < fan_, "GnFactorSet::factor: index out of range");
        TangentTuple xi = params_.zero_tangent();
        for (std::size_t k = 0; k < xi.size(); ++k)
            xi[k].unfolding().noalias() = a_[k].row(static_cast<Eigen::Index>(i)).transpose() *
                                          b_[k].row(static_cast<Eigen::Index>(i * fan_ + j));
        return xi;
    }

    /// <xi_ij restricted to node k, block> for every factor, in (i, j) order.
    Vector node_scores(std::size_t k, const DenseTensor& block) const {
        const Matrix p = a_[k] * block.unfolding();
        Vector s(static_cast<Eigen::Index>(m_ * fan_));
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < fan_; ++j) {
                const auto q = static_cast<Eigen::Index>(i * fan_ + j);
                s(q) = p.row(static_cast<Eigen::Index>(i)).dot(b_[k].row(q));
            }
        return s;
    }

    /// (1/m) sum_{i,j} s_ij xi_ij restricted to node k.
    DenseTensor node_gather(std::size_t k, const Vector& s) const {
        Matrix z = Matrix::Zero(static_cast<Eigen::Index>(m_), b_[k].cols());
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < fan_; ++j) {
                const auto q = static_cast<Eigen::Index>(i * fan_ + j);
                z.row(static_cast<Eigen::Index>(i)).noalias() += s(q) * b_[k].row(q);
            }
        DenseTensor out(params_.core(k).shape());
        if (m_ > 0) out.unfolding().noalias() = (a_[k].transpose() * z) / static_cast<double>(m_);
        return out;
    }

    friend GnFactorSet assemble_weighted(const TtnParams&, const FeatureBatch&, const ForwardCache&,
                                         const Eigen::Ref<const Matrix>&, std::size_t, double);

private:
    TtnParams params_;
    std::size_t m_ = 0;
    std::size_t fan_ = 1;
    double lambda_ = 0.0;
    std::vector<Matrix> a_;  // m x (r_L r_R) per node
    std::vector<Matrix> b_;  // (m fan) x r_k per node
};

/// Builds the factor set from explicit output weight rows: row i * fan + j
/// of `weights` is the j-th weight vector of sample i.
inline GnFactorSet assemble_weighted(const TtnParams& params, const FeatureBatch& batch, const ForwardCache& cache,
                                     const Eigen::Ref<const Matrix>& weights, std::size_t fan, double lambda) {
    const auto& topo = params.topology();
    detail::check_batch(topo, batch);
    detail::require_dims(cache.node_out.size() == topo.node_count() &&
                             static_cast<std::size_t>(cache.output().rows()) == batch.rows(),
                         "assemble_factors: cache does not belong to the batch");
    const std::size_t m = batch.rows();
    detail::require_dims(fan > 0 && static_cast<std::size_t>(weights.rows()) == m * fan &&
                             static_cast<std::size_t>(weights.cols()) == topo.output_dim(),
                         "assemble_weighted: weight matrix has the wrong shape");
    GnFactorSet fs;
    fs.params_ = params;
    fs.m_ = m;
    fs.fan_ = fan;
    fs.set_lambda(lambda);

    for (std::size_t k = 0; k < topo.node_count(); ++k) {
        fs.a_.emplace_back(static_cast<Eigen::Index>(m),
                           static_cast<Eigen::Index>(topo.left_rank(k) * topo.right_rank(k)));
        fs.b_.emplace_back(static_cast<Eigen::Index>(m * fan), static_cast<Eigen::Index>(topo.rank(k)));
    }
    for_each_chunk(m, [&](std::size_t, std::size_t b, std::size_t e) {
        const auto root = weights.middleRows(static_cast<Eigen::Index>(b * fan), static_cast<Eigen::Index>((e - b) * fan));
        detail::descend_rows(params, batch, cache.node_out, root, fan, b, e,
                             [&](std::size_t k, const Matrix& kr, const Matrix& G) {
                                 auto a = fs.a_[k].middleRows(static_cast<Eigen::Index>(b), kr.rows());
                                 a = kr;
                                 if (!topo.is_root(k)) {
                                     const auto A = params.core(k).unfolding();
                                     const Matrix c = kr * A;
                                     a.noalias() -= c * A.transpose();
                                 }
                                 fs.b_[k].middleRows(static_cast<Eigen::Index>(b * fan), G.rows()) = G;
                             });
    });
    return fs;
}

/// Builds the factor set from a forward cache of `batch` at `params`.
///
/// Full mode uses every column of gn_weight_factors. One-shot mode draws one
/// column per sample: for logistic regression with probability softmax(z)_k,
/// for least squares uniformly and scaled by sqrt(n_0), both unbiased.
inline GnFactorSet assemble_factors(const TtnParams& params, const FeatureBatch& batch, const ForwardCache& cache,
                                    LossKind kind, FactorMode mode, Rng& rng, double lambda) {
    const std::size_t m = batch.rows();
    const std::size_t n0 = params.topology().output_dim();
    const std::size_t fan = mode == FactorMode::full ? n0 : 1;
    detail::require_dims(static_cast<std::size_t>(cache.output().rows()) == m,
                         "assemble_factors: cache does not belong to the batch");

    Matrix w(static_cast<Eigen::Index>(m * fan), static_cast<Eigen::Index>(n0));
    const auto& z = cache.output();
    for (std::size_t i = 0; i < m; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        if (mode == FactorMode::full) {
            const Matrix f = gn_weight_factors(kind, z.row(ii).transpose());
            for (std::size_t j = 0; j < fan; ++j)
                w.row(static_cast<Eigen::Index>(i * fan + j)) = f.col(static_cast<Eigen::Index>(j)).transpose();
        } else if (kind == LossKind::multinomial_logistic) {
            w.row(ii) = sample_gn_weight_factor(z.row(ii).transpose(), rng).transpose();
        } else {
            w.row(ii).setZero();
            w(ii, static_cast<Eigen::Index>(rng.index(n0))) = std::sqrt(static_cast<double>(n0));
        }
    }
    return assemble_weighted(params, batch, cache, w, fan, lambda);
}

inline GnFactorSet assemble_factors(const TtnParams& params, const FeatureBatch& batch, LossKind kind,
                                    FactorMode mode, Rng& rng, double lambda) {
    return assemble_factors(params, batch, forward_cache(params, batch), kind, mode, rng, lambda);
}

/// Full operator: (1/m) sum xi <xi, zeta> + lambda zeta.
inline TangentTuple apply(const GnFactorSet& fs, const TangentTuple& zeta) {
    detail::check_tangent(fs.base(), zeta, "apply");
    const std::size_t nodes = zeta.size();
    std::vector<Vector> scores(nodes);
    for_each_index(nodes, [&](std::size_t k) { scores[k] = fs.node_scores(k, zeta[k]); });
    Vector s = Vector::Zero(static_cast<Eigen::Index>(fs.factor_count()));
    for (const auto& t : scores) s += t;
    TangentTuple out = fs.base().zero_tangent();
    for_each_index(nodes, [&](std::size_t k) {
        out[k] = fs.node_gather(k, s);
        auto o = out[k].unfolding();
        o += fs.lambda() * zeta[k].unfolding();
    });
    return out;
}

/// One diagonal block W_k applied to a node-k tensor.
inline DenseTensor apply_block(const GnFactorSet& fs, std::size_t k, const DenseTensor& block) {
    detail::require_dims(k < fs.base().node_count() && block.shape() == fs.base().core(k).shape(),
                         "apply_block: block does not match node");
    DenseTensor out = fs.node_gather(k, fs.node_scores(k, block));
    auto o = out.unfolding();
    o += fs.lambda() * block.unfolding();
    return out;
}

/// Block-diagonal part of the operator: every node uses only its own blocks.
inline TangentTuple apply_block_diag(const GnFactorSet& fs, const TangentTuple& zeta) {
    detail::check_tangent(fs.base(), zeta, "apply_block_diag");
    TangentTuple out = fs.base().zero_tangent();
    for_each_index(zeta.size(), [&](std::size_t k) { out[k] = apply_block(fs, k, zeta[k]); });
    return out;
}

struct CgResult {
    TangentTuple solution;
    std::size_t iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
};

/// Conjugate gradients for op(x) = rhs, stopping at |r| <= tol |rhs|.
template <class Op>
CgResult cg_solve(Op&& op, const TangentTuple& rhs, double tol = 1e-6, std::size_t max_iter = 250) {
    CgResult res;
    res.solution = rhs;
    res.solution.set_zero();
    const double bnorm = norm(rhs);
    if (!std::isfinite(bnorm)) throw NumericalError("cg_solve: non-finite right-hand side");
    if (bnorm == 0.0) {
        res.converged = true;
        return res;
    }
    TangentTuple r = rhs;
    TangentTuple p = rhs;
    double rs = inner(r, r);
    while (res.iterations < max_iter) {
        const TangentTuple ap = op(p);
        const double pap = inner(p, ap);
        if (!std::isfinite(pap)) throw NumericalError("cg_solve: non-finite curvature");
        if (pap <= 0.0) break;
        const double alpha = rs / pap;
        res.solution.axpy(alpha, p);
        r.axpy(-alpha, ap);
        ++res.iterations;
        const double rs_new = inner(r, r);
        if (!std::isfinite(rs_new)) throw NumericalError("cg_solve: non-finite residual");
        if (std::sqrt(rs_new) <= tol * bnorm) {
            rs = rs_new;
            res.converged = true;
            break;
        }
        p *= rs_new / rs;
        p += r;
        rs = rs_new;
    }
    res.relative_residual = std::sqrt(rs) / bnorm;
    return res;
}

/// Independent CG solves W_k x_k = rhs_k for every node, run in lockstep.
/// Each block has its own step sizes and stops once its own relative
/// residual is below tol. `iterations` is the largest per-block count.
inline CgResult cg_solve_blocks(const GnFactorSet& fs, const TangentTuple& rhs, double tol = 1e-6,
                                std::size_t max_iter = 250) {
    detail::check_tangent(fs.base(), rhs, "cg_solve_blocks");
    const std::size_t nodes = rhs.size();
    CgResult res;
    res.solution = fs.base().zero_tangent();
    TangentTuple r = rhs, p = rhs;
    std::vector<double> rs(nodes), bnorm(nodes);
    std::vector<char> active(nodes);
    std::vector<std::size_t> iters(nodes, 0);
    for (std::size_t k = 0; k < nodes; ++k) {
        rs[k] = r[k].dot(r[k]);
        bnorm[k] = std::sqrt(rs[k]);
        if (!std::isfinite(bnorm[k])) throw NumericalError("cg_solve_blocks: non-finite right-hand side");
        active[k] = bnorm[k] > 0.0;
    }
    std::vector<char> failed(nodes, 0);
    for (std::size_t it = 0; it < max_iter; ++it) {
        bool any = false;
        for (auto a : active) any = any || a;
        if (!any) break;
        for_each_index(nodes, [&](std::size_t k) {
            if (!active[k]) return;
            const DenseTensor ap = apply_block(fs, k, p[k]);
            const double pap = p[k].dot(ap);
            if (!std::isfinite(pap)) {
                failed[k] = 1;
                active[k] = 0;
                return;
            }
            if (pap <= 0.0) {
                active[k] = 0;
                return;
            }
            const double alpha = rs[k] / pap;
            auto x = res.solution[k].unfolding();
            auto rk = r[k].unfolding();
            x += alpha * p[k].unfolding();
            rk -= alpha * ap.unfolding();
            ++iters[k];
            const double rs_new = r[k].dot(r[k]);
            if (std::sqrt(rs_new) <= tol * bnorm[k]) {
                rs[k] = rs_new;
                active[k] = 0;
                return;
            }
            auto pk = p[k].unfolding();
            pk = rk + (rs_new / rs[k]) * pk;
            rs[k] = rs_new;
        });
        for (auto f : failed)
            if (f) throw NumericalError("cg_solve_blocks: non-finite values");
    }
    res.converged = true;
    double worst = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
        res.iterations = std::max(res.iterations, iters[k]);
        if (bnorm[k] > 0.0) {
            const double rel = std::sqrt(rs[k]) / bnorm[k];
            worst = std::max(worst, rel);
            if (rel > tol) res.converged = false;
        }
    }
    res.relative_residual = worst;
    return res;
}

/// Rayleigh quotient of block k after `power_iters` power-method steps from init.
inline double block_max_eig(const GnFactorSet& fs, std::size_t k, const DenseTensor& init,
                            std::size_t power_iters = 0) {
    double n = std::sqrt(init.dot(init));
    if (!(n > 0.0)) throw NumericalError("block_max_eig: zero initial block");
    DenseTensor v = init;
    v *= 1.0 / n;
    DenseTensor wv = apply_block(fs, k, v);
    for (std::size_t it = 0; it < power_iters; ++it) {
        n = std::sqrt(wv.dot(wv));
        if (!(n > 0.0)) return 0.0;
        v = std::move(wv);
        v *= 1.0 / n;
        wv = apply_block(fs, k, v);
    }
    return v.dot(wv);
}

}  // namespace ftn
