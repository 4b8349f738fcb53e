#pragma once

#include "ftn/error.hpp"
#include "ftn/gauss_newton.hpp"
#include "ftn/losses.hpp"
#include "ftn/manifold.hpp"
#include "ftn/rng.hpp"
#include "ftn/ttn_model.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ftn {

enum class Method { grad, ngrad, bd_ngrad, bdo_ngrad, d_ngrad };
enum class StepPolicy { armijo, fixed };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::grad: return "grad";
        case Method::ngrad: return "ngrad";
        case Method::bd_ngrad: return "bd-ngrad";
        case Method::bdo_ngrad: return "bdo-ngrad";
        case Method::d_ngrad: return "d-ngrad";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    if (s == "grad") return Method::grad;
    if (s == "ngrad") return Method::ngrad;
    if (s == "bd-ngrad" || s == "bd") return Method::bd_ngrad;
    if (s == "bdo-ngrad" || s == "bdo") return Method::bdo_ngrad;
    if (s == "d-ngrad" || s == "d") return Method::d_ngrad;
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

inline std::string to_string(StepPolicy p) { return p == StepPolicy::armijo ? "armijo" : "fixed"; }

inline StepPolicy parse_step_policy(std::string_view s) {
    if (s == "armijo") return StepPolicy::armijo;
    if (s == "fixed") return StepPolicy::fixed;
    throw ConfigError("unknown step policy '" + std::string(s) + "'");
}

struct OptimizerConfig {
    Method method = Method::ngrad;
    StepPolicy step_policy = StepPolicy::armijo;
    double step_size = 1.0;  ///< fixed step, or the first trial step of the line search
    double armijo_c = 1e-4;
    std::size_t armijo_doublings = 10;
    std::size_t armijo_halvings = 40;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double lambda = 5e-3;
    std::size_t batch_size = 0;  ///< 0 means full batch
    std::size_t max_iters = 500;
    std::uint64_t seed = 0;
    double cg_tol = 1e-6;
    std::size_t cg_max_iter = 250;
    std::size_t power_iters = 0;
    std::size_t eval_every = 10;
    double stop_loss = 0.0;      ///< stop once the training loss is at or below this (0 = off)
    double stop_accuracy = 0.0;  ///< stop once test accuracy reaches this (0 = off)

    void validate() const {
        if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("step_size must be positive");
        if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw ConfigError("armijo_c must lie in (0, 1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
        if (!(cg_tol > 0.0)) throw ConfigError("cg_tol must be positive");
        if (eval_every == 0) throw ConfigError("eval_every must be positive");
    }
};

struct TraceRecord {
    std::size_t iter = 0;
    double seconds = 0.0;
    double train_loss = 0.0;
    double step_size = 0.0;
    std::optional<double> test_accuracy;
    std::string method;
    double descent = 0.0;  ///< inner(rgrad, zeta) of the step that produced this iterate
    std::size_t cg_iterations = 0;
};

/// Horizontal projection of the empirical risk gradient (weight 1/m).
inline TangentTuple riemannian_gradient(const TtnParams& params, const FeatureBatch& batch, const ForwardCache& cache,
                                        const Eigen::Ref<const Matrix>& targets, LossKind kind,
                                        double* loss = nullptr) {
    const auto lc = loss_and_cotangents(kind, cache.output(), targets);
    if (loss) *loss = lc.loss;
    const double w = batch.rows() > 0 ? 1.0 / static_cast<double>(batch.rows()) : 0.0;
    return horizontal_project(params, backprop(params, batch, cache, lc.cotangents, w));
}

inline TangentTuple riemannian_gradient(const TtnParams& params, const FeatureBatch& batch,
                                        const Eigen::Ref<const Matrix>& targets, LossKind kind) {
    return riemannian_gradient(params, batch, forward_cache(params, batch), targets, kind);
}

/// Two-way backtracking line search with a remembered step.
///
/// If the current trial step satisfies the Armijo condition it is doubled
/// while the condition keeps holding (at most `doublings` times); otherwise
/// it is halved until it holds (at most `halvings` times). The accepted step
/// becomes the next trial step.
struct ArmijoSearch {
    double c = 1e-4;
    std::size_t doublings = 10;
    std::size_t halvings = 40;
    double gamma = 1.0;

    struct Result {
        double step = 0.0;
        double loss = 0.0;
    };

    /// eval_loss(step) may return a non-finite value for an unusable step.
    template <class Eval>
    Result search(Eval&& eval_loss, double base_loss, double slope) {
        if (!(slope < 0.0)) throw LineSearchError("line search: direction is not a descent direction");
        auto ok = [&](double g, double v) { return std::isfinite(v) && v <= base_loss + c * g * slope; };
        double g = gamma;
        double v = eval_loss(g);
        if (ok(g, v)) {
            for (std::size_t k = 0; k < doublings; ++k) {
                const double g2 = 2.0 * g;
                const double v2 = eval_loss(g2);
                if (!ok(g2, v2)) break;
                g = g2;
                v = v2;
            }
        } else {
            std::size_t k = 0;
            for (; k < halvings; ++k) {
                g *= 0.5;
                v = eval_loss(g);
                if (ok(g, v)) break;
            }
            if (k == halvings) throw LineSearchError("line search: no acceptable step after halving");
        }
        gamma = g;
        return {g, v};
    }
};

/// Mutable optimizer state carried between iterations.
struct OptimizerState {
    TtnParams params;
    TangentTuple momentum;        ///< empty until the first step
    std::vector<double> eig_avg;  ///< running block eigenvalue estimates (d-ngrad)
    std::size_t iteration = 0;
    ArmijoSearch armijo;
    Rng rng{0};

    OptimizerState() = default;
    OptimizerState(TtnParams p, const OptimizerConfig& cfg)
        : params(std::move(p)), eig_avg(params.node_count(), 1.0), rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
        armijo.c = cfg.armijo_c;
        armijo.doublings = cfg.armijo_doublings;
        armijo.halvings = cfg.armijo_halvings;
        armijo.gamma = cfg.step_size;
    }
};

struct StepOutcome {
    double loss_before = 0.0;
    double loss_after = 0.0;
    double step = 0.0;
    double descent = 0.0;
    std::size_t cg_iterations = 0;
};

namespace detail {

struct Direction {
    TangentTuple zeta;
    std::size_t cg_iterations = 0;
};

inline Direction search_direction(OptimizerState& st, const FeatureBatch& batch, const ForwardCache& cache,
                                  const TangentTuple& g, LossKind kind, const OptimizerConfig& cfg) {
    Direction dir;
    switch (cfg.method) {
        case Method::grad:
            dir.zeta = g;
            break;
        case Method::ngrad: {
            const auto fs = assemble_factors(st.params, batch, cache, kind, FactorMode::full, st.rng, cfg.lambda);
            auto r = cg_solve([&](const TangentTuple& z) { return apply(fs, z); }, g, cfg.cg_tol, cfg.cg_max_iter);
            dir.zeta = std::move(r.solution);
            dir.cg_iterations = r.iterations;
            break;
        }
        case Method::bd_ngrad:
        case Method::bdo_ngrad: {
            const auto mode = cfg.method == Method::bd_ngrad ? FactorMode::full : FactorMode::one_shot;
            const auto fs = assemble_factors(st.params, batch, cache, kind, mode, st.rng, cfg.lambda);
            auto r = cg_solve_blocks(fs, g, cfg.cg_tol, cfg.cg_max_iter);
            dir.zeta = std::move(r.solution);
            dir.cg_iterations = r.iterations;
            break;
        }
        case Method::d_ngrad: {
            const auto fs = assemble_factors(st.params, batch, cache, kind, FactorMode::one_shot, st.rng, cfg.lambda);
            dir.zeta = g;
            for (std::size_t k = 0; k < g.size(); ++k) {
                if (g[k].dot(g[k]) > 0.0) {
                    const double est = block_max_eig(fs, k, g[k], cfg.power_iters);
                    st.eig_avg[k] = cfg.beta2 * st.eig_avg[k] + (1.0 - cfg.beta2) * est;
                }
                dir.zeta[k] *= 1.0 / st.eig_avg[k];
            }
            break;
        }
    }
    // Exponential averaging; momentum is already transported.
    if (cfg.beta1 > 0.0) {
        if (st.momentum.size() == 0) st.momentum = st.params.zero_tangent();
        st.momentum *= cfg.beta1;
        st.momentum.axpy(1.0 - cfg.beta1, dir.zeta);
        dir.zeta = st.momentum;
    }
    return dir;
}

}  // namespace detail

/// One iteration of the configured method on a batch.
///
/// Computes the Riemannian gradient g, the search direction zeta, picks a
/// step gamma and retracts params along -gamma zeta. With momentum the new
/// momentum is transported to the new point.
inline StepOutcome optimizer_step(OptimizerState& st, const FeatureBatch& batch, const Eigen::Ref<const Matrix>& targets,
                                  LossKind kind, const OptimizerConfig& cfg) {
    StepOutcome out;
    const auto cache = forward_cache(st.params, batch);
    const TangentTuple g = riemannian_gradient(st.params, batch, cache, targets, kind, &out.loss_before);
    if (!std::isfinite(out.loss_before) || !g.all_finite()) throw NumericalError("non-finite loss or gradient");
    auto dir = detail::search_direction(st, batch, cache, g, kind, cfg);
    if (!dir.zeta.all_finite()) throw NumericalError("non-finite search direction");
    out.cg_iterations = dir.cg_iterations;
    out.descent = inner(g, dir.zeta);

    auto trial = [&](double step) -> std::optional<TtnParams> {
        try {
            return qr_retract(st.params, dir.zeta, -step);
        } catch (const DegenerateStepError&) {
            return std::nullopt;
        } catch (const NumericalError&) {
            return std::nullopt;
        }
    };
    auto loss_at = [&](const TtnParams& p) { return loss_value(kind, forward(p, batch), targets); };

    if (norm(dir.zeta) == 0.0) {
        out.loss_after = out.loss_before;
        ++st.iteration;
        return out;
    }

    if (cfg.step_policy == StepPolicy::fixed) {
        auto p = trial(cfg.step_size);
        if (!p) throw DegenerateStepError("fixed step produced a degenerate retraction");
        st.params = std::move(*p);
        out.step = cfg.step_size;
        out.loss_after = loss_at(st.params);
    } else {
        auto eval = [&](double step) {
            auto p = trial(step);
            return p ? loss_at(*p) : std::numeric_limits<double>::infinity();
        };
        const auto r = st.armijo.search(eval, out.loss_before, -out.descent);
        st.params = *trial(r.step);
        out.step = r.step;
        out.loss_after = r.loss;
    }
    if (cfg.beta1 > 0.0) st.momentum = transport(st.params, std::move(st.momentum));
    ++st.iteration;
    return out;
}

/// Armijo step from gamma_init under eval_loss; see ArmijoSearch.
template <class Eval>
double armijo_backtracking(Eval&& eval_loss, double base_loss, double slope, double gamma_init, double c = 1e-4) {
    ArmijoSearch s;
    s.c = c;
    s.gamma = gamma_init;
    return s.search(std::forward<Eval>(eval_loss), base_loss, slope).step;
}

struct StepResult {
    TtnParams params;
    TraceRecord record;
};

namespace detail {

inline StepResult single_step(TtnParams params, const FeatureBatch& batch, const Eigen::Ref<const Matrix>& targets,
                              LossKind kind, OptimizerConfig cfg, Method method) {
    cfg.method = method;
    OptimizerState st(std::move(params), cfg);
    const auto so = optimizer_step(st, batch, targets, kind, cfg);
    StepResult r{std::move(st.params), {}};
    r.record.iter = 1;
    r.record.train_loss = so.loss_after;
    r.record.step_size = so.step;
    r.record.method = to_string(method);
    r.record.descent = so.descent;
    r.record.cg_iterations = so.cg_iterations;
    return r;
}

}  // namespace detail

/// One natural gradient step from a fresh state.
inline StepResult step_ngrad(TtnParams params, const FeatureBatch& batch, const Eigen::Ref<const Matrix>& targets,
                             LossKind kind, const OptimizerConfig& cfg) {
    return detail::single_step(std::move(params), batch, targets, kind, cfg, Method::ngrad);
}

/// One block-diagonal step (bd-ngrad, or bdo-ngrad with one_shot).
inline StepResult step_bd(TtnParams params, const FeatureBatch& batch, const Eigen::Ref<const Matrix>& targets,
                          LossKind kind, const OptimizerConfig& cfg, bool one_shot) {
    return detail::single_step(std::move(params), batch, targets, kind, cfg,
                               one_shot ? Method::bdo_ngrad : Method::bd_ngrad);
}

/// One d-ngrad step that advances the caller's state.
inline TraceRecord step_d_ngrad(OptimizerState& st, const FeatureBatch& batch, const Eigen::Ref<const Matrix>& targets,
                                LossKind kind, OptimizerConfig cfg) {
    cfg.method = Method::d_ngrad;
    const auto so = optimizer_step(st, batch, targets, kind, cfg);
    TraceRecord rec;
    rec.iter = st.iteration;
    rec.train_loss = so.loss_after;
    rec.step_size = so.step;
    rec.method = to_string(cfg.method);
    rec.descent = so.descent;
    return rec;
}

/// Held-out samples for accuracy evaluation.
struct EvalSet {
    FeatureBatch batch;
    Matrix targets;
};

/// Fraction of rows whose largest output matches the one-hot target.
inline double accuracy(const Eigen::Ref<const Matrix>& outputs, const Eigen::Ref<const Matrix>& targets) {
    if (outputs.rows() == 0) return 0.0;
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
        Eigen::Index a = 0, b = 0;
        outputs.row(i).maxCoeff(&a);
        targets.row(i).maxCoeff(&b);
        if (a == b) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(outputs.rows());
}

struct RunResult {
    TtnParams params;
    std::vector<TraceRecord> trace;
    bool stopped_early = false;
    std::string stop_reason;
};

/// Training loop. Record 0 holds the initial loss on the whole training set;
/// record t holds the loss after step t on the batch used for that step.
/// `on_record` is called for every record as it is produced.
inline RunResult run(const OptimizerConfig& cfg, TtnParams init, const FeatureBatch& train, const Matrix& targets,
                     LossKind kind, const EvalSet* test = nullptr,
                     const std::function<void(const TraceRecord&)>& on_record = {}) {
    cfg.validate();
    detail::require_dims(static_cast<std::size_t>(targets.rows()) == train.rows(), "run: target rows do not match");
    const auto t0 = std::chrono::steady_clock::now();
    auto seconds = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const std::string tag = to_string(cfg.method);
    OptimizerState st(std::move(init), cfg);
    RunResult res;
    Rng shuffle(cfg.seed);

    auto emit = [&](TraceRecord rec) {
        if (!std::isfinite(rec.train_loss)) throw NumericalError("non-finite training loss");
        if (test && (rec.iter % cfg.eval_every == 0 || rec.iter == cfg.max_iters))
            rec.test_accuracy = accuracy(forward(st.params, test->batch), test->targets);
        if (on_record) on_record(rec);
        res.trace.push_back(std::move(rec));
    };

    {
        TraceRecord rec;
        rec.method = tag;
        rec.train_loss = loss_value(kind, forward(st.params, train), targets);
        rec.seconds = seconds();
        emit(rec);
    }
    TtnParams best = st.params;
    double best_loss = res.trace.back().train_loss;

    const std::size_t m = train.rows();
    const bool stochastic = cfg.batch_size > 0 && cfg.batch_size < m;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    auto should_stop = [&](const TraceRecord& rec) {
        if (cfg.stop_loss > 0.0 && !stochastic && rec.train_loss <= cfg.stop_loss) return true;
        if (cfg.stop_accuracy > 0.0 && rec.test_accuracy && *rec.test_accuracy >= cfg.stop_accuracy) return true;
        return false;
    };
    if (should_stop(res.trace.back())) {
        res.params = st.params;
        res.stopped_early = true;
        res.stop_reason = "target reached";
        return res;
    }

    for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
        StepOutcome so;
        try {
            if (stochastic) {
                if (order.empty() || cursor + cfg.batch_size > m) {
                    order = shuffle.permutation(m);
                    cursor = 0;
                }
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                             order.begin() + static_cast<std::ptrdiff_t>(cursor + cfg.batch_size));
                cursor += cfg.batch_size;
                Matrix y(static_cast<Eigen::Index>(idx.size()), targets.cols());
                for (std::size_t i = 0; i < idx.size(); ++i)
                    y.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(idx[i]));
                so = optimizer_step(st, train.select(idx), y, kind, cfg);
            } else {
                so = optimizer_step(st, train, targets, kind, cfg);
            }
        } catch (const LineSearchError& e) {
            res.stopped_early = true;
            res.stop_reason = e.what();
            break;
        }
        TraceRecord rec;
        rec.iter = it;
        rec.method = tag;
        rec.train_loss = so.loss_after;
        rec.step_size = so.step;
        rec.descent = so.descent;
        rec.cg_iterations = so.cg_iterations;
        rec.seconds = seconds();
        emit(rec);
        if (rec.train_loss < best_loss) {
            best_loss = rec.train_loss;
            best = st.params;
        }
        if (should_stop(res.trace.back())) {
            res.stopped_early = true;
            res.stop_reason = "target reached";
            break;
        }
    }
    res.params = (res.stopped_early && res.stop_reason != "target reached" && !stochastic) ? best : st.params;
    return res;
}

}  // namespace ftn
