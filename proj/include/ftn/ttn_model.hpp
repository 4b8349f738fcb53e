#pragma once

#include "ftn/error.hpp"
#include "ftn/parallel.hpp"
#include "ftn/rng.hpp"
#include "ftn/tensor_kernels.hpp"
#include "ftn/tree_topology.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace ftn {

/// Per-mode evaluated bases: modes[v] is m x n_v with one sample per row.
struct FeatureBatch {
    std::vector<Matrix> modes;

    std::size_t rows() const noexcept {
        return modes.empty() ? 0 : static_cast<std::size_t>(modes.front().rows());
    }
    std::size_t mode_count() const noexcept { return modes.size(); }

    void check() const {
        for (const auto& m : modes)
            detail::require_dims(static_cast<std::size_t>(m.rows()) == rows(),
                                 "FeatureBatch: mode matrices disagree on the sample count");
    }

    /// Batch restricted to the given sample indices (in that order).
    FeatureBatch select(const std::vector<std::size_t>& idx) const {
        FeatureBatch out;
        out.modes.reserve(modes.size());
        for (const auto& m : modes) {
            Matrix s(static_cast<Eigen::Index>(idx.size()), m.cols());
            for (std::size_t i = 0; i < idx.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
            out.modes.push_back(std::move(s));
        }
        return out;
    }

    FeatureBatch middle_rows(std::size_t begin, std::size_t count) const {
        FeatureBatch out;
        for (const auto& m : modes)
            out.modes.emplace_back(m.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)));
        return out;
    }
};

/// Per-node perturbation of the cores: gradients, search directions, momenta.
struct TangentTuple {
    std::vector<DenseTensor> blocks;

    std::size_t size() const noexcept { return blocks.size(); }
    DenseTensor& operator[](std::size_t k) { return blocks[k]; }
    const DenseTensor& operator[](std::size_t k) const { return blocks[k]; }

    bool same_shape(const TangentTuple& o) const {
        if (blocks.size() != o.blocks.size()) return false;
        for (std::size_t k = 0; k < blocks.size(); ++k)
            if (!blocks[k].same_shape(o.blocks[k])) return false;
        return true;
    }

    std::size_t total_size() const noexcept {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.size();
        return n;
    }

    bool all_finite() const noexcept {
        for (const auto& b : blocks)
            if (!b.all_finite()) return false;
        return true;
    }

    void set_zero() noexcept {
        for (auto& b : blocks) b.set_zero();
    }

    TangentTuple& operator+=(const TangentTuple& o) {
        detail::require_dims(same_shape(o), "TangentTuple +=: shape mismatch");
        for (std::size_t k = 0; k < blocks.size(); ++k) blocks[k] += o.blocks[k];
        return *this;
    }
    TangentTuple& operator-=(const TangentTuple& o) {
        detail::require_dims(same_shape(o), "TangentTuple -=: shape mismatch");
        for (std::size_t k = 0; k < blocks.size(); ++k) blocks[k] -= o.blocks[k];
        return *this;
    }
    TangentTuple& operator*=(double a) noexcept {
        for (auto& b : blocks) b *= a;
        return *this;
    }
    /// this += a * x
    TangentTuple& axpy(double a, const TangentTuple& x) {
        detail::require_dims(same_shape(x), "TangentTuple axpy: shape mismatch");
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            auto* y = blocks[k].data();
            const auto* xv = x.blocks[k].data();
            for (std::size_t i = 0; i < blocks[k].size(); ++i) y[i] += a * xv[i];
        }
        return *this;
    }

    friend TangentTuple operator+(TangentTuple a, const TangentTuple& b) { return a += b; }
    friend TangentTuple operator-(TangentTuple a, const TangentTuple& b) { return a -= b; }
    friend TangentTuple operator*(double s, TangentTuple a) { return a *= s; }
    friend bool operator==(const TangentTuple&, const TangentTuple&) = default;
};

/// Core tuple of a balanced binary TTN.
///
/// Every non-root core has an orthonormal-column unfolding once it comes out
/// of random_init, qr_retract or change_of_basis; the root is unconstrained.
class TtnParams {
public:
    TtnParams() = default;

    TtnParams(TreeTopology topology, std::vector<DenseTensor> cores)
        : topology_(std::move(topology)), cores_(std::move(cores)) {
        if (cores_.size() != topology_.node_count())
            throw DimensionError("TtnParams: expected one core per internal node");
        for (std::size_t k = 0; k < cores_.size(); ++k)
            if (cores_[k].shape() != topology_.core_shape(k))
                throw DimensionError("TtnParams: core shape does not match topology at node " +
                                     topology_.label(k));
    }

    /// All-zero cores of the right shapes.
    static TtnParams zeros(const TreeTopology& topology) {
        std::vector<DenseTensor> cores;
        for (std::size_t k = 0; k < topology.node_count(); ++k) cores.emplace_back(topology.core_shape(k));
        return TtnParams(topology, std::move(cores));
    }

    const TreeTopology& topology() const noexcept { return topology_; }
    std::size_t node_count() const noexcept { return cores_.size(); }
    const DenseTensor& core(std::size_t k) const { return cores_.at(k); }
    DenseTensor& core(std::size_t k) { return cores_.at(k); }
    const std::vector<DenseTensor>& cores() const noexcept { return cores_; }

    TangentTuple zero_tangent() const {
        TangentTuple t;
        for (const auto& c : cores_) t.blocks.emplace_back(c.shape());
        return t;
    }

    /// Largest entry of |A^T A - I| over the non-root unfoldings.
    double stiefel_defect() const {
        double worst = 0.0;
        for (std::size_t k = 0; k + 1 < cores_.size(); ++k) {
            const auto A = cores_[k].unfolding();
            const Matrix gram = A.transpose() * A;
            const double err = (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
            worst = std::max(worst, err);
        }
        return worst;
    }

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& c : cores_) n += c.size();
        return n;
    }

    friend bool operator==(const TtnParams&, const TtnParams&) = default;

private:
    TreeTopology topology_;
    std::vector<DenseTensor> cores_;
};

/// Node outputs W_k (m x r_k) of a forward pass, kept for backpropagation.
struct ForwardCache {
    std::vector<Matrix> node_out;

    const Matrix& output() const { return node_out.back(); }
};

namespace detail {

inline void check_batch(const TreeTopology& topo, const FeatureBatch& batch) {
    batch.check();
    require_dims(batch.mode_count() == topo.leaf_count(), "batch mode count does not match leaf count");
    for (std::size_t v = 0; v < topo.leaf_count(); ++v)
        require_dims(static_cast<std::size_t>(batch.modes[v].cols()) == topo.leaf_dims()[v],
                     "batch mode " + std::to_string(v) + " width does not match leaf dimension");
}

/// Left/right inputs of node k over rows [begin, end).
inline std::pair<Eigen::Ref<const Matrix>, Eigen::Ref<const Matrix>> node_inputs(
    const TreeTopology& topo, const std::vector<Matrix>& node_out, const FeatureBatch& batch,
    std::size_t k, std::size_t begin, std::size_t count) {
    const auto& n = topo.node(k);
    const auto b = static_cast<Eigen::Index>(begin);
    const auto c = static_cast<Eigen::Index>(count);
    if (n.leaf_children)
        return {batch.modes[n.left].middleRows(b, c), batch.modes[n.right].middleRows(b, c)};
    return {node_out[n.left].middleRows(b, c), node_out[n.right].middleRows(b, c)};
}

/// Bottom-up MTTKRP recursion over rows [begin, end) writing into node_out.
inline void forward_rows(const TtnParams& params, const FeatureBatch& batch, std::vector<Matrix>& node_out,
                         std::size_t begin, std::size_t end) {
    const auto& topo = params.topology();
    const auto b = static_cast<Eigen::Index>(begin);
    const auto c = static_cast<Eigen::Index>(end - begin);
    for (std::size_t k = 0; k < topo.node_count(); ++k) {
        auto [L, R] = node_inputs(topo, node_out, batch, k, begin, end - begin);
        node_out[k].middleRows(b, c).noalias() = khatri_rao(L, R) * params.core(k).unfolding();
    }
}

/// Top-down cotangent sweep for rows [begin, end) of the sample range.
///
/// `root_cot` holds `fan` cotangent rows per sample (row q belongs to sample
/// begin + q / fan). visit(k, kr, G) receives the chunk's Khatri-Rao inputs
/// (one row per sample) and the node cotangents (fan rows per sample).
template <class Visit>
void descend_rows(const TtnParams& params, const FeatureBatch& batch, const std::vector<Matrix>& node_out,
                  const Eigen::Ref<const Matrix>& root_cot, std::size_t fan, std::size_t begin,
                  std::size_t end, Visit&& visit) {
    const auto& topo = params.topology();
    const std::size_t count = end - begin;
    std::vector<Matrix> cot(topo.node_count());
    cot[topo.root()] = root_cot;
    for (std::size_t kk = topo.node_count(); kk-- > 0;) {
        const auto& n = topo.node(kk);
        auto [L, R] = node_inputs(topo, node_out, batch, kk, begin, count);
        const Matrix kr = khatri_rao(L, R);
        const Matrix& G = cot[kk];
        visit(kk, kr, G);
        if (n.leaf_children) {
            cot[kk] = Matrix();
            continue;
        }
        const auto rl = static_cast<Eigen::Index>(topo.left_rank(kk));
        const auto rr = static_cast<Eigen::Index>(topo.right_rank(kk));
        const Matrix T = G * params.core(kk).unfolding().transpose();
        Matrix gl(G.rows(), rl), gr(G.rows(), rr);
        for (Eigen::Index q = 0; q < G.rows(); ++q) {
            const Eigen::Index i = q / static_cast<Eigen::Index>(fan);
            ConstMatrixMap Tq(T.row(q).data(), rl, rr);
            gl.row(q).noalias() = (Tq * R.row(i).transpose()).transpose();
            gr.row(q).noalias() = (L.row(i) * Tq);
        }
        cot[n.left] = std::move(gl);
        cot[n.right] = std::move(gr);
        cot[kk] = Matrix();
    }
}

}  // namespace detail

/// Forward pass keeping every node output.
inline ForwardCache forward_cache(const TtnParams& params, const FeatureBatch& batch) {
    const auto& topo = params.topology();
    detail::check_batch(topo, batch);
    const std::size_t m = batch.rows();
    ForwardCache cache;
    for (std::size_t k = 0; k < topo.node_count(); ++k)
        cache.node_out.emplace_back(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(topo.rank(k)));
    for_each_chunk(m, [&](std::size_t, std::size_t b, std::size_t e) {
        detail::forward_rows(params, batch, cache.node_out, b, e);
    });
    return cache;
}

/// Model outputs F(params)(x^i), one row per sample (m x n_0).
inline Matrix forward(const TtnParams& params, const FeatureBatch& batch) {
    const auto& topo = params.topology();
    detail::check_batch(topo, batch);
    const std::size_t m = batch.rows();
    Matrix out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(topo.output_dim()));
    for_each_chunk(m, [&](std::size_t, std::size_t b, std::size_t e) {
        auto chunk = batch.middle_rows(b, e - b);
        std::vector<Matrix> node_out;
        for (std::size_t k = 0; k < topo.node_count(); ++k)
            node_out.emplace_back(static_cast<Eigen::Index>(e - b), static_cast<Eigen::Index>(topo.rank(k)));
        detail::forward_rows(params, chunk, node_out, 0, e - b);
        out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) = node_out.back();
    });
    return out;
}

/// weight * sum_i Dtau(params)^*[v^i (x) Phi_1(x^i_1) (x) ... (x) Phi_d(x^i_d)].
inline TangentTuple backprop(const TtnParams& params, const FeatureBatch& batch, const ForwardCache& cache,
                             const Eigen::Ref<const Matrix>& cotangents, double weight) {
    const auto& topo = params.topology();
    detail::require_dims(static_cast<std::size_t>(cotangents.rows()) == batch.rows() &&
                             static_cast<std::size_t>(cotangents.cols()) == topo.output_dim(),
                         "backprop: cotangents must be m x n_0");
    const std::size_t m = batch.rows();
    std::vector<TangentTuple> partial(chunk_count(m), params.zero_tangent());
    for_each_chunk(m, [&](std::size_t c, std::size_t b, std::size_t e) {
        const auto root = cotangents.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b));
        detail::descend_rows(params, batch, cache.node_out, root, 1, b, e,
                             [&](std::size_t k, const Matrix& kr, const Matrix& G) {
                                 partial[c][k].unfolding().noalias() += kr.transpose() * G;
                             });
    });
    TangentTuple out = params.zero_tangent();
    for (const auto& p : partial) out += p;
    out *= weight;
    return out;
}

inline TangentTuple backprop(const TtnParams& params, const FeatureBatch& batch,
                             const Eigen::Ref<const Matrix>& cotangents, double weight) {
    return backprop(params, batch, forward_cache(params, batch), cotangents, weight);
}

/// Directional derivative DF(params)[direction](x^i), one row per sample.
///
/// Forward-mode sweep: dW_k = kr(L,R) dA_k + (kr(dL,R) + kr(L,dR)) A_k, which
/// equals the Leibniz sum of forward passes with one core replaced.
inline Matrix apply_dtau(const TtnParams& params, const FeatureBatch& batch, const TangentTuple& direction) {
    const auto& topo = params.topology();
    detail::check_batch(topo, batch);
    detail::require_dims(direction.size() == params.node_count(), "apply_dtau: direction has wrong node count");
    for (std::size_t k = 0; k < params.node_count(); ++k)
        detail::require_dims(direction[k].shape() == params.core(k).shape(), "apply_dtau: block shape mismatch");
    const std::size_t m = batch.rows();
    Matrix out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(topo.output_dim()));
    for_each_chunk(m, [&](std::size_t, std::size_t b, std::size_t e) {
        const auto cnt = static_cast<Eigen::Index>(e - b);
        auto chunk = batch.middle_rows(b, e - b);
        std::vector<Matrix> w(topo.node_count()), dw(topo.node_count());
        for (std::size_t k = 0; k < topo.node_count(); ++k) {
            const auto& n = topo.node(k);
            if (n.leaf_children) {
                const Matrix kr = khatri_rao(chunk.modes[n.left], chunk.modes[n.right]);
                w[k] = kr * params.core(k).unfolding();
                dw[k] = kr * direction[k].unfolding();
            } else {
                const Matrix kr = khatri_rao(w[n.left], w[n.right]);
                w[k] = kr * params.core(k).unfolding();
                dw[k] = kr * direction[k].unfolding();
                const Matrix dkr = khatri_rao(dw[n.left], w[n.right]) + khatri_rao(w[n.left], dw[n.right]);
                dw[k].noalias() += dkr * params.core(k).unfolding();
            }
        }
        out.middleRows(static_cast<Eigen::Index>(b), cnt) = dw.back();
    });
    return out;
}

namespace detail {

/// core[a,b,c] <- sum_a' R[a,a'] core[a',b,c] (side 0) or over b (side 1).
inline void absorb_child_factor(DenseTensor& core, int side, const Matrix& R) {
    const std::size_t rl = core.dim(0), rr = core.dim(1), rt = core.dim(2);
    DenseTensor out(core.shape());
    if (side == 0) {
        require_dims(static_cast<std::size_t>(R.cols()) == rl && static_cast<std::size_t>(R.rows()) == rl,
                     "absorb_child_factor: left factor shape");
        ConstMatrixMap src(core.data(), static_cast<Eigen::Index>(rl), static_cast<Eigen::Index>(rr * rt));
        MatrixMap dst(out.data(), static_cast<Eigen::Index>(rl), static_cast<Eigen::Index>(rr * rt));
        dst.noalias() = R * src;
    } else {
        require_dims(static_cast<std::size_t>(R.cols()) == rr && static_cast<std::size_t>(R.rows()) == rr,
                     "absorb_child_factor: right factor shape");
        for (std::size_t a = 0; a < rl; ++a) {
            ConstMatrixMap src(core.data() + a * rr * rt, static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(rt));
            MatrixMap dst(out.data() + a * rr * rt, static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(rt));
            dst.noalias() = R * src;
        }
    }
    core = std::move(out);
}

/// Replaces each non-root core by the Q factor of its unfolding (bottom-up)
/// and pushes R into the parent. Throws DegenerateStepError on rank loss.
inline void orthonormalize_sweep(std::vector<DenseTensor>& cores, const TreeTopology& topo,
                                 double rank_tol = 1e-12) {
    for (std::size_t k = 0; k + 1 < topo.node_count(); ++k) {
        auto qr = thin_qr(cores[k].unfolding());
        const double scale = std::max(qr.r.cwiseAbs().maxCoeff(), 1e-300);
        for (Eigen::Index j = 0; j < qr.r.rows(); ++j)
            if (!(qr.r(j, j) > rank_tol * scale))
                throw DegenerateStepError("rank collapse at node " + topo.label(k));
        cores[k].unfolding() = qr.q;
        const auto parent = static_cast<std::size_t>(topo.node(k).parent);
        absorb_child_factor(cores[parent], topo.node(parent).left == k ? 0 : 1, qr.r);
    }
}

}  // namespace detail

/// Parameters representing the same function under the bases Psi_v = M_v^{-1} Phi_v.
inline TtnParams change_of_basis(const TtnParams& params, const std::vector<Matrix>& transforms) {
    const auto& topo = params.topology();
    detail::require_dims(transforms.size() == topo.leaf_count(), "change_of_basis: one transform per leaf");
    for (std::size_t v = 0; v < transforms.size(); ++v)
        detail::require_dims(static_cast<std::size_t>(transforms[v].rows()) == topo.leaf_dims()[v] &&
                                 transforms[v].rows() == transforms[v].cols(),
                             "change_of_basis: transform " + std::to_string(v) + " has wrong shape");
    std::vector<DenseTensor> cores = params.cores();
    for (std::size_t k = 0; k < topo.node_count(); ++k) {
        const auto& n = topo.node(k);
        if (!n.leaf_children) continue;
        detail::absorb_child_factor(cores[k], 0, transforms[n.left].transpose());
        detail::absorb_child_factor(cores[k], 1, transforms[n.right].transpose());
    }
    detail::orthonormalize_sweep(cores, topo);
    return TtnParams(topo, std::move(cores));
}

/// Random orthonormal non-root cores and a Gaussian root scaled so that the
/// outputs on `probe` have unit root-mean-square.
inline TtnParams random_init(const TreeTopology& topology, std::uint64_t seed, const FeatureBatch& probe) {
    Rng rng(seed);
    auto params = TtnParams::zeros(topology);
    for (std::size_t k = 0; k < topology.node_count(); ++k) {
        auto& core = params.core(k);
        for (auto& v : core.values()) v = rng.normal();
        if (!topology.is_root(k)) core.unfolding() = thin_qr(core.unfolding()).q;
    }
    const Matrix out = forward(params, probe);
    const double rms = std::sqrt(out.squaredNorm() / static_cast<double>(out.size()));
    if (!(rms > 0.0) || !std::isfinite(rms)) throw NumericalError("random_init: degenerate probe outputs");
    params.core(topology.root()) *= 1.0 / rms;
    return params;
}

}  // namespace ftn
