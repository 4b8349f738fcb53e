#include "ftn/data.hpp"
#include "ftn/optimizers.hpp"
#include "ftn/testing/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ftn;

namespace {

struct Recovery {
    FeatureFamily fam{FeatureKind::legendre, 2, false};
    TreeTopology topo = build_balanced({3, 3, 3, 3}, 3, {4, 4});
    RecoveryProblem prob;
    FeatureBatch batch;
    TtnParams init;

    explicit Recovery(std::size_t m = 96) {
        prob = gen_recovery(5, m, topo, fam, 2.5e-3);
        batch = eval_features(fam, prob.data.inputs);
        init = random_init(topo, 9, batch);
    }
};

OptimizerConfig config(Method m, std::size_t iters = 20) {
    OptimizerConfig c;
    c.method = m;
    c.max_iters = iters;
    c.lambda = 1e-3;
    return c;
}

}  // namespace

TEST(Armijo, QuadraticAcceptsUnitStep) {
    auto phi = [](double g) { return (1.0 - g) * (1.0 - g); };
    EXPECT_DOUBLE_EQ(armijo_backtracking(phi, 1.0, -2.0, 1.0), 1.0);
}

TEST(Armijo, FailingStartHalves) {
    auto phi = [](double g) { return (1.0 - g) * (1.0 - g); };
    const double g = armijo_backtracking(phi, 1.0, -2.0, 8.0);
    EXPECT_LT(g, 2.0);
    EXPECT_LE(phi(g), 1.0 - 1e-4 * g * 2.0);
}

TEST(Armijo, LinearDoublesToCap) {
    auto phi = [](double g) { return 1.0 - g; };
    EXPECT_DOUBLE_EQ(armijo_backtracking(phi, 1.0, -1.0, 1.0), 1024.0);
}

TEST(Armijo, RemembersAcceptedStep) {
    ArmijoSearch s;
    auto phi = [](double g) { return (1.0 - g) * (1.0 - g); };
    s.gamma = 16.0;
    const auto r = s.search(phi, 1.0, -2.0);
    EXPECT_DOUBLE_EQ(s.gamma, r.step);
}

TEST(Armijo, RejectsAscentDirection) {
    auto phi = [](double g) { return g; };
    EXPECT_THROW(armijo_backtracking(phi, 0.0, 1.0, 1.0), LineSearchError);
}

TEST(Armijo, NonFiniteTrialIsRejected) {
    auto phi = [](double g) { return g > 0.3 ? std::nan("") : 1.0 - g; };
    const double g = armijo_backtracking(phi, 1.0, -1.0, 1.0);
    EXPECT_LE(g, 0.3);
}

TEST(Gradient, ZeroAtExactFit) {
    Recovery r;
    const Matrix y = forward(r.init, r.batch);
    const auto g = riemannian_gradient(r.init, r.batch, y, LossKind::least_squares);
    EXPECT_LE(norm(g), 1e-14);
}

TEST(Gradient, LinearInResidualScale) {
    Recovery r;
    const Matrix f = forward(r.init, r.batch);
    const Matrix y = r.prob.data.targets;
    const auto g1 = riemannian_gradient(r.init, r.batch, y, LossKind::least_squares);
    const Matrix y3 = f + 3.0 * (y - f);
    const auto g3 = riemannian_gradient(r.init, r.batch, y3, LossKind::least_squares);
    EXPECT_LE(norm(g3 - 3.0 * g1), 1e-12 * norm(g3));
}

TEST(Gradient, MatchesFiniteDifferences) {
    Recovery r(24);
    Rng rng(4);
    for (auto kind : {LossKind::least_squares, LossKind::multinomial_logistic}) {
        Matrix y = r.prob.data.targets;
        if (kind == LossKind::multinomial_logistic) {
            std::vector<std::size_t> labels;
            for (Eigen::Index i = 0; i < y.rows(); ++i) labels.push_back(static_cast<std::size_t>(i) % 3);
            y = one_hot(labels, 3);
        }
        const auto g = riemannian_gradient(r.init, r.batch, y, kind);
        for (int k = 0; k < 5; ++k) {
            const auto dir = horizontal_project(r.init, oracle::random_tangent(r.init, rng));
            const double fd = oracle::fd_risk(r.init, r.batch, y, kind, dir);
            EXPECT_NEAR(inner(g, dir), fd, 1e-6 * std::abs(fd));
        }
    }
}

TEST(Steps, EveryMethodDescendsOnRecovery) {
    Recovery r;
    for (auto m : {Method::grad, Method::ngrad, Method::bd_ngrad, Method::bdo_ngrad, Method::d_ngrad}) {
        auto cfg = config(m);
        OptimizerState st(r.init, cfg);
        const auto so = optimizer_step(st, r.batch, r.prob.data.targets, LossKind::least_squares, cfg);
        EXPECT_GT(so.descent, 0.0) << to_string(m);
        EXPECT_LT(so.loss_after, so.loss_before) << to_string(m);
    }
}

TEST(Steps, ZeroGradientLeavesParamsUnchanged) {
    Recovery r;
    const Matrix y = forward(r.init, r.batch);
    auto cfg = config(Method::ngrad);
    auto res = step_ngrad(r.init, r.batch, y, LossKind::least_squares, cfg);
    EXPECT_EQ(res.params, r.init);
    EXPECT_EQ(res.record.descent, 0.0);
}

TEST(Steps, SingleNodeBlockStepEqualsNgrad) {
    const FeatureFamily fam{FeatureKind::legendre, 2, false};
    const auto topo = build_balanced({3, 3}, 2, {});
    auto prob = gen_recovery(3, 40, topo, fam, 1e-3);
    const auto batch = eval_features(fam, prob.data.inputs);
    const auto init = random_init(topo, 1, batch);
    auto cfg = config(Method::ngrad);
    cfg.cg_tol = 1e-12;
    const auto a = step_ngrad(init, batch, prob.data.targets, LossKind::least_squares, cfg);
    const auto b = step_bd(init, batch, prob.data.targets, LossKind::least_squares, cfg, false);
    EXPECT_LE(oracle::max_abs(a.params.core(0).unfolding() - b.params.core(0).unfolding()), 1e-10);
    EXPECT_NEAR(a.record.train_loss, b.record.train_loss, 1e-12);
}

TEST(Steps, BlockSolutionsMatchDenseBlockSolves) {
    Recovery r(30);
    Rng rng(2);
    const double lambda = 1e-2;
    const auto fs = assemble_factors(r.init, r.batch, LossKind::least_squares, FactorMode::full, rng, lambda);
    const auto g = riemannian_gradient(r.init, r.batch, r.prob.data.targets, LossKind::least_squares);
    const auto sol = cg_solve_blocks(fs, g, 1e-12, 500).solution;
    const auto basis = oracle::horizontal_basis(r.init);
    const Matrix dense = oracle::dense_gn(r.init, r.batch, LossKind::least_squares, lambda, basis);
    // Basis vectors are grouped by node, so diagonal blocks are contiguous.
    std::size_t start = 0;
    for (std::size_t k = 0; k < r.init.node_count(); ++k) {
        std::size_t len = 0;
        while (start + len < basis.size() && basis[start + len].blocks[k].unfolding().norm() > 0.0) ++len;
        const auto s = static_cast<Eigen::Index>(start), n = static_cast<Eigen::Index>(len);
        const Vector rhs = oracle::to_coords(basis, g).segment(s, n);
        const Vector ref = dense.block(s, s, n, n).ldlt().solve(rhs);
        const Vector got = oracle::to_coords(basis, sol).segment(s, n);
        EXPECT_LE((got - ref).norm(), 1e-6 * ref.norm()) << "node " << k;
        start += len;
    }
    EXPECT_EQ(start, basis.size());
}

TEST(DNgrad, DegenerateMomentaGiveScaledGradient) {
    // All-zero features make every GN block lambda * identity.
    Recovery r(16);
    for (auto& m : r.batch.modes) m.setZero();
    auto cfg = config(Method::d_ngrad);
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    cfg.lambda = 0.5;
    OptimizerState st(r.init, cfg);
    Rng rng(1);
    const auto g = horizontal_project(r.init, oracle::random_tangent(r.init, rng));
    const auto dir = detail::search_direction(st, r.batch, forward_cache(r.init, r.batch), g,
                                              LossKind::least_squares, cfg);
    EXPECT_LE(norm(dir.zeta - 2.0 * g), 1e-12 * norm(g));
}

TEST(DNgrad, EigenvalueAverageClosedForm) {
    Recovery r(16);
    for (auto& m : r.batch.modes) m.setZero();
    auto cfg = config(Method::d_ngrad);
    cfg.beta2 = 0.9;
    cfg.lambda = 0.25;
    cfg.step_policy = StepPolicy::fixed;
    cfg.step_size = 1e-3;
    OptimizerState st(r.init, cfg);
    Rng rng(3);
    const auto cache = forward_cache(r.init, r.batch);
    for (int t = 1; t <= 7; ++t) {
        const auto g = horizontal_project(r.init, oracle::random_tangent(r.init, rng));
        detail::search_direction(st, r.batch, cache, g, LossKind::least_squares, cfg);
        const double expect = std::pow(0.9, t) + 0.25 * (1.0 - std::pow(0.9, t));
        for (double e : st.eig_avg) EXPECT_NEAR(e, expect, 1e-12);
    }
}

TEST(DNgrad, MomentumIsHorizontalAfterTransport) {
    Recovery r;
    auto cfg = config(Method::d_ngrad);
    cfg.beta1 = 0.9;
    cfg.step_policy = StepPolicy::fixed;
    cfg.step_size = 0.05;
    OptimizerState st(r.init, cfg);
    for (int t = 0; t < 3; ++t) step_d_ngrad(st, r.batch, r.prob.data.targets, LossKind::least_squares, cfg);
    EXPECT_LE(norm(st.momentum - horizontal_project(st.params, st.momentum)), 1e-10);
}

TEST(Run, ArmijoTracesAreNonIncreasing) {
    Recovery r;
    for (auto m : {Method::grad, Method::ngrad, Method::bd_ngrad, Method::bdo_ngrad, Method::d_ngrad}) {
        const auto res = run(config(m, 15), r.init, r.batch, r.prob.data.targets, LossKind::least_squares);
        for (std::size_t i = 1; i < res.trace.size(); ++i)
            EXPECT_LE(res.trace[i].train_loss, res.trace[i - 1].train_loss) << to_string(m) << " at " << i;
    }
}

TEST(Run, StiefelInvariantsHoldThroughout) {
    Recovery r;
    auto cfg = config(Method::bd_ngrad, 1);
    OptimizerState st(r.init, cfg);
    for (int t = 0; t < 30; ++t) {
        optimizer_step(st, r.batch, r.prob.data.targets, LossKind::least_squares, cfg);
        ASSERT_LE(st.params.stiefel_defect(), 1e-10);
    }
}

TEST(Run, IdenticalSeedsGiveIdenticalTraces) {
    Recovery r;
    auto cfg = config(Method::bdo_ngrad, 8);
    cfg.batch_size = 32;
    cfg.beta1 = 0.5;
    cfg.lambda = 1.0;
    cfg.step_policy = StepPolicy::fixed;
    cfg.step_size = 0.1;
    cfg.seed = 11;
    const auto a = run(cfg, r.init, r.batch, r.prob.data.targets, LossKind::least_squares);
    const auto b = run(cfg, r.init, r.batch, r.prob.data.targets, LossKind::least_squares);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].train_loss, b.trace[i].train_loss);
    EXPECT_EQ(a.params, b.params);
}

TEST(Run, ZeroIterationsGiveOnlyInitialRecord) {
    Recovery r;
    const auto res = run(config(Method::grad, 0), r.init, r.batch, r.prob.data.targets, LossKind::least_squares);
    ASSERT_EQ(res.trace.size(), 1u);
    EXPECT_EQ(res.trace[0].iter, 0u);
}

TEST(Run, StopLossEndsEarly) {
    Recovery r;
    auto cfg = config(Method::ngrad, 200);
    cfg.stop_loss = 0.05;
    const auto res = run(cfg, r.init, r.batch, r.prob.data.targets, LossKind::least_squares);
    EXPECT_TRUE(res.stopped_early);
    EXPECT_LE(res.trace.back().train_loss, 0.05);
}

TEST(Run, AccuracyEvaluatedOnCadence) {
    Recovery r;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < r.batch.rows(); ++i) labels.push_back(i % 3);
    const Matrix y = one_hot(labels, 3);
    EvalSet test{r.batch, y};
    auto cfg = config(Method::grad, 7);
    cfg.eval_every = 3;
    const auto res = run(cfg, r.init, r.batch, y, LossKind::multinomial_logistic, &test);
    for (const auto& rec : res.trace)
        EXPECT_EQ(rec.test_accuracy.has_value(), rec.iter % 3 == 0 || rec.iter == 7) << rec.iter;
}

TEST(Config, InvalidValuesRejected) {
    OptimizerConfig c;
    c.step_size = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = OptimizerConfig{};
    c.beta1 = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_method("adam"), ConfigError);
    EXPECT_EQ(parse_method("bd"), Method::bd_ngrad);
}
