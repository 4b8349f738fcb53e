#include "ftn/feature_maps.hpp"
#include "ftn/testing/oracles.hpp"

#include <gtest/gtest.h>

using namespace ftn;

namespace {
Vector values_at(const FeatureFamily& f, double x) {
    Matrix s(1, 1);
    s(0, 0) = x;
    return eval_features(f, s).modes[0].row(0).transpose();
}
}  // namespace

TEST(EvalFeatures, NormalizedAffineAtZero) {
    const Vector v = values_at({FeatureKind::normalized_affine, 1}, 0.0);
    EXPECT_DOUBLE_EQ(v(0), 1.0);
    EXPECT_DOUBLE_EQ(v(1), 0.0);
}

TEST(EvalFeatures, NormalizedAffineRowsHaveUnitNorm) {
    Rng rng(1);
    Matrix x(50, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-5, 5);
    auto b = eval_features({FeatureKind::normalized_affine, 1}, x);
    for (const auto& m : b.modes)
        for (Eigen::Index i = 0; i < m.rows(); ++i) EXPECT_NEAR(m.row(i).norm(), 1.0, 1e-15);
}

TEST(EvalFeatures, MonomialDegreeTwo) {
    const Vector v = values_at({FeatureKind::monomial, 2}, 2.0);
    EXPECT_EQ(v, Vector::Map(std::vector<double>{1, 2, 4}.data(), 3));
}

TEST(EvalFeatures, LegendreAtOne) {
    const Vector v = values_at({FeatureKind::legendre, 2}, 1.0);
    EXPECT_NEAR(v(0), 1.0, 1e-15);
    EXPECT_NEAR(v(1), std::sqrt(3.0), 1e-15);
    EXPECT_NEAR(v(2), std::sqrt(5.0), 1e-14);
}

TEST(EvalFeatures, HermiteRawAndNormalized) {
    const Vector raw = values_at({FeatureKind::hermite, 3}, 2.0);
    // He_0..He_3 at 2: 1, 2, 3, 2
    EXPECT_NEAR(raw(2), 3.0, 1e-15);
    EXPECT_NEAR(raw(3), 2.0, 1e-15);
    const Vector nrm = values_at({FeatureKind::hermite, 3, true}, 2.0);
    EXPECT_NEAR(nrm(3), 2.0 / std::sqrt(6.0), 1e-15);
}

TEST(EvalFeatures, RowsDependOnlyOnTheirSample) {
    Rng rng(2);
    Matrix x(10, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
    FeatureFamily f{FeatureKind::legendre, 4};
    auto all = eval_features(f, x);
    auto one = eval_features(f, x.middleRows(3, 1));
    EXPECT_EQ(Matrix(all.modes[1].middleRows(3, 1)), one.modes[1]);
}

TEST(EvalFeatures, UnknownFamily) { EXPECT_THROW(parse_feature_kind("fourier"), ConfigError); }

TEST(GramMatrix, LegendreIsIdentity) {
    for (std::size_t deg = 0; deg < 8; ++deg) {
        const Matrix g = gram_matrix({FeatureKind::legendre, deg});
        EXPECT_LE(oracle::max_abs(g - Matrix::Identity(g.rows(), g.cols())), 1e-12);
    }
}

TEST(GramMatrix, LegendreQuadratureOracle) {
    auto [nodes, weights] = oracle::gauss_legendre(64);
    FeatureFamily f{FeatureKind::legendre, 6};
    Matrix x(nodes.size(), 1);
    x.col(0) = nodes;
    const Matrix phi = eval_features(f, x).modes[0];
    const Matrix g = phi.transpose() * (0.5 * weights).asDiagonal() * phi;
    EXPECT_LE(oracle::max_abs(g - Matrix::Identity(7, 7)), 1e-12);
}

TEST(GramMatrix, Monomial) {
    Matrix g1(2, 2);
    g1 << 1, 0, 0, 1.0 / 3;
    EXPECT_LE(oracle::max_abs(gram_matrix({FeatureKind::monomial, 1}) - g1), 1e-15);
    Matrix g2(3, 3);
    g2 << 1, 0, 1.0 / 3, 0, 1.0 / 3, 0, 1.0 / 3, 0, 1.0 / 5;
    EXPECT_LE(oracle::max_abs(gram_matrix({FeatureKind::monomial, 2}) - g2), 1e-15);
}

TEST(GramMatrix, UnsupportedFamily) {
    EXPECT_THROW(gram_matrix({FeatureKind::normalized_affine, 1}), ConfigError);
}

TEST(BasisTransform, RelatesEvaluations) {
    FeatureFamily mono{FeatureKind::monomial, 3}, herm{FeatureKind::hermite, 3};
    const Matrix M = basis_transform(herm, mono);
    Rng rng(3);
    for (int t = 0; t < 5; ++t) {
        const double x = rng.uniform(-1, 1);
        Matrix s(1, 1);
        s(0, 0) = x;
        const Vector ph = eval_features(herm, s).modes[0].row(0).transpose();
        const Vector pm = eval_features(mono, s).modes[0].row(0).transpose();
        EXPECT_LE((ph - M * pm).cwiseAbs().maxCoeff(), 1e-13);
    }
}
