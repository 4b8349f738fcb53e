#pragma once

#include "ftn/error.hpp"
#include "ftn/feature_maps.hpp"
#include "ftn/rng.hpp"
#include "ftn/tensor_kernels.hpp"
#include "ftn/tree_topology.hpp"
#include "ftn/ttn_model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace ftn {

struct Dataset {
    Matrix inputs;   ///< m x d
    Matrix targets;  ///< m x n_0
    std::string name;
    std::size_t classes = 0;  ///< 0 for regression data
    double value_min = 0.0;
    double value_max = 1.0;

    std::size_t rows() const noexcept { return static_cast<std::size_t>(inputs.rows()); }

    Dataset select(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.name = name;
        out.classes = classes;
        out.value_min = value_min;
        out.value_max = value_max;
        out.inputs.resize(static_cast<Eigen::Index>(idx.size()), inputs.cols());
        out.targets.resize(static_cast<Eigen::Index>(idx.size()), targets.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(idx[i]));
            out.targets.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(idx[i]));
        }
        return out;
    }
};

inline Matrix one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
    Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes)
            throw FormatError("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(classes) +
                              " classes");
        y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1.0;
    }
    return y;
}

struct RecoveryProblem {
    Dataset data;
    TtnParams truth;
};

/// Samples x uniform on [-1, 1]^d, y = h*(x) + noise for a random TTN h*
/// built on `topology` in the basis `family`.
inline RecoveryProblem gen_recovery(std::uint64_t seed, std::size_t m, const TreeTopology& topology,
                                    const FeatureFamily& family, double noise_var) {
    if (noise_var < 0.0) throw ConfigError("noise variance must be non-negative");
    Rng rng(seed);
    const std::uint64_t truth_seed = rng.next_u64();
    const std::uint64_t probe_seed = rng.next_u64();
    RecoveryProblem p;
    p.truth = random_init(topology, truth_seed, probe_batch(family, topology.leaf_count(), -1.0, 1.0, probe_seed));
    const auto d = static_cast<Eigen::Index>(topology.leaf_count());
    p.data.inputs.resize(static_cast<Eigen::Index>(m), d);
    for (Eigen::Index i = 0; i < p.data.inputs.rows(); ++i)
        for (Eigen::Index v = 0; v < d; ++v) p.data.inputs(i, v) = rng.uniform(-1.0, 1.0);
    p.data.targets = forward(p.truth, eval_features(family, p.data.inputs));
    const double sd = std::sqrt(noise_var);
    for (Eigen::Index i = 0; i < p.data.targets.rows(); ++i)
        for (Eigen::Index j = 0; j < p.data.targets.cols(); ++j) p.data.targets(i, j) += sd * rng.normal();
    p.data.name = "recovery";
    p.data.value_min = -1.0;
    p.data.value_max = 1.0;
    return p;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& path) {
    if (off + 4 > buf.size()) throw FormatError(path + ": truncated header");
    return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
           std::uint32_t{buf[off + 3]};
}

inline void put_be32(std::string& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// IDX image and label files (unsigned bytes, big-endian header). Pixels
/// are divided by 255; labels are one-hot encoded over `classes` classes.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes = 10) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    const auto im = detail::read_be32(img, 0, images_path);
    if (im != kIdxImageMagic) throw FormatError(images_path + ": bad magic number for an image file");
    const auto lm = detail::read_be32(lab, 0, labels_path);
    if (lm != kIdxLabelMagic) throw FormatError(labels_path + ": bad magic number for a label file");
    const std::size_t n = detail::read_be32(img, 4, images_path);
    const std::size_t rows = detail::read_be32(img, 8, images_path);
    const std::size_t cols = detail::read_be32(img, 12, images_path);
    const std::size_t nl = detail::read_be32(lab, 4, labels_path);
    if (nl != n) throw FormatError("image and label counts differ");
    if (img.size() < 16 + n * rows * cols) throw FormatError(images_path + ": truncated pixel data");
    if (lab.size() < 8 + n) throw FormatError(labels_path + ": truncated label data");
    Dataset ds;
    ds.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rows * cols));
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < rows * cols; ++p)
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
                static_cast<double>(img[16 + i * rows * cols + p]) / 255.0;
        labels[i] = lab[8 + i];
    }
    ds.targets = one_hot(labels, classes);
    ds.classes = classes;
    ds.name = "idx";
    return ds;
}

/// Writes `pixels` (n x rows*cols, values 0..255) as an IDX image file.
inline void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels, std::size_t n,
                             std::size_t rows, std::size_t cols) {
    detail::require_dims(pixels.size() == n * rows * cols, "write_idx_images: pixel count mismatch");
    std::string out;
    detail::put_be32(out, kIdxImageMagic);
    detail::put_be32(out, static_cast<std::uint32_t>(n));
    detail::put_be32(out, static_cast<std::uint32_t>(rows));
    detail::put_be32(out, static_cast<std::uint32_t>(cols));
    out.append(pixels.begin(), pixels.end());
    std::ofstream f(path, std::ios::binary);
    if (!f.write(out.data(), static_cast<std::streamsize>(out.size()))) throw FormatError("cannot write " + path);
}

inline void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::string out;
    detail::put_be32(out, kIdxLabelMagic);
    detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.append(labels.begin(), labels.end());
    std::ofstream f(path, std::ios::binary);
    if (!f.write(out.data(), static_cast<std::streamsize>(out.size()))) throw FormatError("cannot write " + path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline bool parse_number(std::string s, double& out) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return false;
    s = s.substr(b, e - b + 1);
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    if (*first == '+') ++first;
    const auto r = std::from_chars(first, last, out);
    return r.ec == std::errc() && r.ptr == last;
}

}  // namespace detail

/// Numeric CSV with one label column. Features are divided by `value_max`;
/// a first row containing a non-numeric cell is treated as a header.
/// label_column < 0 counts from the end (-1 is the last column).
inline Dataset load_csv(const std::string& path, long label_column = -1, double value_max = 16.0,
                        std::size_t classes = 0) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    if (!(value_max > 0.0)) throw ConfigError("value_max must be positive");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t width = 0;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = detail::split_csv_line(line);
        std::vector<double> vals(cells.size());
        bool numeric = true;
        for (std::size_t c = 0; c < cells.size(); ++c) numeric = numeric && detail::parse_number(cells[c], vals[c]);
        if (!numeric) {
            if (rows.empty() && width == 0) {
                width = cells.size();
                continue;
            }
            throw FormatError(path + ":" + std::to_string(lineno) + ": non-numeric cell");
        }
        if (width == 0) width = cells.size();
        if (cells.size() != width) throw FormatError(path + ":" + std::to_string(lineno) + ": ragged row");
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw FormatError(path + ": no data rows");
    const long w = static_cast<long>(width);
    const long lc = label_column < 0 ? w + label_column : label_column;
    if (lc < 0 || lc >= w) throw ConfigError("label column out of range");
    Dataset ds;
    ds.inputs.resize(static_cast<Eigen::Index>(rows.size()), w - 1);
    std::vector<std::size_t> labels(rows.size());
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Eigen::Index col = 0;
        for (long c = 0; c < w; ++c) {
            const double v = rows[i][static_cast<std::size_t>(c)];
            if (c == lc) {
                if (v < 0.0 || v != std::floor(v))
                    throw FormatError(path + ": label must be a non-negative integer");
                labels[i] = static_cast<std::size_t>(v);
                max_label = std::max(max_label, labels[i]);
            } else {
                ds.inputs(static_cast<Eigen::Index>(i), col++) = v / value_max;
            }
        }
    }
    ds.classes = classes > 0 ? classes : max_label + 1;
    ds.targets = one_hot(labels, ds.classes);
    ds.name = "csv";
    return ds;
}

/// Area-weighted resampling of row-major H x W images to target x target.
inline Matrix downscale(const Eigen::Ref<const Matrix>& images, std::size_t H, std::size_t W, std::size_t target) {
    detail::require_dims(static_cast<std::size_t>(images.cols()) == H * W, "downscale: image width mismatch");
    if (target == 0 || target > H || target > W) throw DimensionError("downscale: target larger than source");
    // weights[t][s]: overlap of source cell s with target cell t, normalized per target cell.
    auto weights = [target](std::size_t src) {
        Matrix w = Matrix::Zero(static_cast<Eigen::Index>(target), static_cast<Eigen::Index>(src));
        const double scale = static_cast<double>(src) / static_cast<double>(target);
        for (std::size_t t = 0; t < target; ++t) {
            const double lo = static_cast<double>(t) * scale, hi = static_cast<double>(t + 1) * scale;
            for (std::size_t s = static_cast<std::size_t>(lo); s < src && static_cast<double>(s) < hi; ++s) {
                const double ov = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
                if (ov > 0.0) w(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s)) = ov / scale;
            }
        }
        return w;
    };
    const Matrix wr = weights(H), wc = weights(W);
    Matrix out(images.rows(), static_cast<Eigen::Index>(target * target));
    for (Eigen::Index i = 0; i < images.rows(); ++i) {
        ConstMatrixMap img(images.row(i).data(), static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(W));
        const Matrix small = wr * img * wc.transpose();
        out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(small.data(), small.size());
    }
    return out;
}

/// Leaf order that lists the pixels of a side x side image (side a power of
/// two) along the Z-order curve, so sibling leaves of a balanced tree cover
/// 2x2, then 4x4, ... blocks. Entry k is the row-major index of leaf k.
inline std::vector<std::size_t> zorder_permutation(std::size_t side) {
    if (side == 0 || (side & (side - 1)) != 0) throw DimensionError("z-order needs a power-of-two side length");
    std::vector<std::size_t> perm(side * side);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            std::size_t z = 0;
            for (std::size_t b = 0; (std::size_t{1} << b) < side; ++b)
                z |= (((r >> b) & 1u) << (2 * b + 1)) | (((c >> b) & 1u) << (2 * b));
            perm[z] = r * side + c;
        }
    return perm;
}

/// Column permutation: out(:, k) = in(:, perm[k]).
inline Matrix permute_columns(const Eigen::Ref<const Matrix>& in, const std::vector<std::size_t>& perm) {
    detail::require_dims(perm.size() == static_cast<std::size_t>(in.cols()), "permute_columns: size mismatch");
    Matrix out(in.rows(), in.cols());
    for (std::size_t k = 0; k < perm.size(); ++k)
        out.col(static_cast<Eigen::Index>(k)) = in.col(static_cast<Eigen::Index>(perm[k]));
    return out;
}

/// Seeded permutation split: the first floor(fraction m) rows go to train.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
    Rng rng(seed);
    const auto perm = rng.permutation(ds.rows());
    const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(ds.rows())));
    std::vector<std::size_t> a(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cut));
    std::vector<std::size_t> b(perm.begin() + static_cast<std::ptrdiff_t>(cut), perm.end());
    return {ds.select(a), ds.select(b)};
}

}  // namespace ftn
