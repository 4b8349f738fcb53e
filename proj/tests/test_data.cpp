#include "ftn/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace ftn;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("ftn_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string digits_row(int fill, int label) {
    std::string s;
    for (int i = 0; i < 64; ++i) s += std::to_string(fill) + ",";
    return s + std::to_string(label) + "\n";
}

}  // namespace

TEST(OneHot, ExactlyOneOnePerRow) {
    const Matrix y = one_hot({2, 0, 1, 2}, 3);
    for (Eigen::Index i = 0; i < y.rows(); ++i) EXPECT_EQ(y.row(i).sum(), 1.0);
    EXPECT_EQ(y(0, 2), 1.0);
    EXPECT_THROW(one_hot({3}, 3), FormatError);
}

TEST(Idx, RoundTripIsBitExact) {
    TempDir tmp;
    std::vector<std::uint8_t> pix(2 * 3 * 2);
    std::iota(pix.begin(), pix.end(), std::uint8_t{250});  // wraps through 255 and 0
    write_idx_images(tmp.file("img"), pix, 2, 3, 2);
    write_idx_labels(tmp.file("lab"), {7, 1});
    const auto ds = load_idx(tmp.file("img"), tmp.file("lab"));
    ASSERT_EQ(ds.rows(), 2u);
    ASSERT_EQ(ds.inputs.cols(), 6);
    for (std::size_t i = 0; i < pix.size(); ++i)
        EXPECT_EQ(ds.inputs(static_cast<Eigen::Index>(i / 6), static_cast<Eigen::Index>(i % 6)), pix[i] / 255.0);
    EXPECT_EQ(ds.targets(0, 7), 1.0);
    EXPECT_EQ(ds.targets(1, 1), 1.0);
    EXPECT_EQ(ds.targets.cols(), 10);
}

TEST(Idx, FullPixelScalesToOne) {
    TempDir tmp;
    write_idx_images(tmp.file("img"), {255, 0}, 1, 1, 2);
    write_idx_labels(tmp.file("lab"), {0});
    const auto ds = load_idx(tmp.file("img"), tmp.file("lab"));
    EXPECT_EQ(ds.inputs(0, 0), 1.0);
    EXPECT_EQ(ds.inputs(0, 1), 0.0);
}

TEST(Idx, BadMagicRejected) {
    TempDir tmp;
    write_bytes(tmp.file("img"), {0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
    write_idx_labels(tmp.file("lab"), {0});
    EXPECT_THROW(load_idx(tmp.file("img"), tmp.file("lab")), FormatError);
}

TEST(Idx, TruncatedFileRejected) {
    TempDir tmp;
    write_bytes(tmp.file("img"), {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
    write_idx_labels(tmp.file("lab"), {0, 1});
    EXPECT_THROW(load_idx(tmp.file("img"), tmp.file("lab")), FormatError);
}

TEST(Idx, LabelOutOfRangeRejected) {
    TempDir tmp;
    write_idx_images(tmp.file("img"), {1}, 1, 1, 1);
    write_idx_labels(tmp.file("lab"), {10});
    EXPECT_THROW(load_idx(tmp.file("img"), tmp.file("lab")), FormatError);
}

TEST(Idx, CountMismatchRejected) {
    TempDir tmp;
    write_idx_images(tmp.file("img"), {1, 2}, 2, 1, 1);
    write_idx_labels(tmp.file("lab"), {0});
    EXPECT_THROW(load_idx(tmp.file("img"), tmp.file("lab")), FormatError);
}

TEST(Csv, ThreeRowFixture) {
    TempDir tmp;
    write_text(tmp.file("d.csv"), digits_row(0, 3) + digits_row(8, 5) + digits_row(16, 9));
    const auto ds = load_csv(tmp.file("d.csv"));
    ASSERT_EQ(ds.rows(), 3u);
    EXPECT_EQ(ds.inputs.cols(), 64);
    EXPECT_EQ(ds.inputs(1, 10), 0.5);
    EXPECT_EQ(ds.targets(2, 9), 1.0);
}

TEST(Csv, FullPixelsScaleToOne) {
    TempDir tmp;
    write_text(tmp.file("d.csv"), digits_row(16, 0));
    const auto ds = load_csv(tmp.file("d.csv"));
    EXPECT_EQ(ds.inputs.minCoeff(), 1.0);
    EXPECT_EQ(ds.inputs.maxCoeff(), 1.0);
}

TEST(Csv, HeaderSkipped) {
    TempDir tmp;
    write_text(tmp.file("d.csv"), "a,b,label\n1,2,0\n3,4,1\n");
    const auto ds = load_csv(tmp.file("d.csv"), -1, 4.0);
    ASSERT_EQ(ds.rows(), 2u);
    EXPECT_EQ(ds.inputs(1, 0), 0.75);
}

TEST(Csv, RaggedRowRejected) {
    TempDir tmp;
    write_text(tmp.file("d.csv"), "1,2,0\n3,1\n");
    EXPECT_THROW(load_csv(tmp.file("d.csv")), FormatError);
}

TEST(Csv, NonNumericCellRejected) {
    TempDir tmp;
    write_text(tmp.file("d.csv"), "1,2,0\n3,x,1\n");
    EXPECT_THROW(load_csv(tmp.file("d.csv")), FormatError);
}

TEST(Csv, LabelColumnFirst) {
    TempDir tmp;
    write_text(tmp.file("d.csv"), "2,16,0\n1,0,8\n");
    const auto ds = load_csv(tmp.file("d.csv"), 0);
    EXPECT_EQ(ds.targets(0, 2), 1.0);
    EXPECT_EQ(ds.inputs(1, 1), 0.5);
}

TEST(Downscale, ConstantImageStaysConstant) {
    const Matrix img = Matrix::Constant(2, 28 * 28, 0.37);
    const Matrix out = downscale(img, 28, 28, 16);
    EXPECT_LE((out.array() - 0.37).abs().maxCoeff(), 1e-15);
}

TEST(Downscale, TwoByTwoToOneIsMean) {
    Matrix img(1, 4);
    img << 0.1, 0.2, 0.6, 1.0;
    EXPECT_NEAR(downscale(img, 2, 2, 1)(0, 0), 0.475, 1e-15);
}

TEST(Downscale, PreservesGlobalMean) {
    Rng rng(3);
    Matrix img(3, 28 * 28);
    for (Eigen::Index i = 0; i < img.rows(); ++i)
        for (Eigen::Index j = 0; j < img.cols(); ++j) img(i, j) = rng.uniform(0.0, 1.0);
    const Matrix out = downscale(img, 28, 28, 16);
    for (Eigen::Index i = 0; i < img.rows(); ++i) EXPECT_NEAR(out.row(i).mean(), img.row(i).mean(), 1e-12);
    EXPECT_GE(out.minCoeff(), 0.0);
    EXPECT_LE(out.maxCoeff(), 1.0);
}

TEST(Downscale, TargetLargerThanSourceRejected) {
    EXPECT_THROW(downscale(Matrix::Zero(1, 4), 2, 2, 3), DimensionError);
}

TEST(ZOrder, SiblingsFormBlocks) {
    const auto p = zorder_permutation(4);
    EXPECT_EQ(p[0], 0u);
    EXPECT_EQ(p[1], 1u);
    EXPECT_EQ(p[2], 4u);
    EXPECT_EQ(p[3], 5u);
    EXPECT_EQ(p[4], 2u);
    std::set<std::size_t> seen(p.begin(), p.end());
    EXPECT_EQ(seen.size(), 16u);
    EXPECT_THROW(zorder_permutation(6), DimensionError);
}

TEST(Split, EightyTwenty) {
    Dataset ds;
    ds.inputs = Matrix::Zero(10, 1);
    for (Eigen::Index i = 0; i < 10; ++i) ds.inputs(i, 0) = static_cast<double>(i);
    ds.targets = Matrix::Zero(10, 1);
    const auto [a, b] = split(ds, 0.8, 4);
    EXPECT_EQ(a.rows(), 8u);
    EXPECT_EQ(b.rows(), 2u);
    std::vector<double> all;
    for (Eigen::Index i = 0; i < 8; ++i) all.push_back(a.inputs(i, 0));
    for (Eigen::Index i = 0; i < 2; ++i) all.push_back(b.inputs(i, 0));
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 10; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
    const auto [c, d] = split(ds, 0.8, 4);
    EXPECT_EQ(a.inputs, c.inputs);
    EXPECT_THROW(split(ds, 1.0, 4), ConfigError);
}

TEST(Recovery, NoiseFreeTargetsMatchTruth) {
    const FeatureFamily fam{FeatureKind::legendre, 2, false};
    const auto topo = build_balanced({3, 3, 3, 3}, 3, {5, 5});
    const auto p = gen_recovery(1, 50, topo, fam, 0.0);
    EXPECT_EQ(p.data.targets, forward(p.truth, eval_features(fam, p.data.inputs)));
    EXPECT_GE(p.data.inputs.minCoeff(), -1.0);
    EXPECT_LE(p.data.inputs.maxCoeff(), 1.0);
}

TEST(Recovery, EmpiricalNoiseVariance) {
    const FeatureFamily fam{FeatureKind::legendre, 2, false};
    const auto topo = build_balanced({3, 3, 3, 3}, 3, {5, 5});
    const auto noisy = gen_recovery(2, 10000, topo, fam, 2.5e-3);
    const Matrix clean = forward(noisy.truth, eval_features(fam, noisy.data.inputs));
    const double var = (noisy.data.targets - clean).squaredNorm() / static_cast<double>(clean.size());
    EXPECT_NEAR(var, 2.5e-3, 0.05 * 2.5e-3);
}

TEST(Recovery, SeededGenerationIsReproducible) {
    const FeatureFamily fam{FeatureKind::hermite, 2, false};
    const auto topo = build_balanced({3, 3, 3, 3}, 3, {5, 5});
    const auto a = gen_recovery(9, 64, topo, fam, 1e-2);
    const auto b = gen_recovery(9, 64, topo, fam, 1e-2);
    EXPECT_EQ(a.data.inputs, b.data.inputs);
    EXPECT_EQ(a.data.targets, b.data.targets);
    EXPECT_EQ(a.truth, b.truth);
}
