#pragma once

#include "ftn/error.hpp"
#include "ftn/ttn_model.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace ftn {

inline constexpr char kCheckpointMagic[4] = {'F', 'T', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_le32(std::string& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

inline void put_le64(std::string& out, std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> buf) : buf_(std::move(buf)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int s = 0; s < 4; ++s) v |= std::uint32_t{buf_[pos_++]} << (8 * s);
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int s = 0; s < 8; ++s) v |= std::uint64_t{buf_[pos_++]} << (8 * s);
        return std::bit_cast<double>(v);
    }
    void bytes(char* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const noexcept { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw FormatError("checkpoint: truncated file");
    }
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Layout: "FTNC", version, d, n_0, leaf dims, bond dim count, bond dims,
/// then every core in node order (u32 fields, f64 values, little-endian).
inline std::string serialize_checkpoint(const TtnParams& params) {
    const auto& topo = params.topology();
    std::string out(kCheckpointMagic, 4);
    detail::put_le32(out, kCheckpointVersion);
    detail::put_le32(out, static_cast<std::uint32_t>(topo.leaf_count()));
    detail::put_le32(out, static_cast<std::uint32_t>(topo.output_dim()));
    for (auto n : topo.leaf_dims()) detail::put_le32(out, static_cast<std::uint32_t>(n));
    const auto bonds = topo.bond_dims();
    detail::put_le32(out, static_cast<std::uint32_t>(bonds.size()));
    for (auto r : bonds) detail::put_le32(out, static_cast<std::uint32_t>(r));
    for (const auto& c : params.cores())
        for (double v : c.values()) detail::put_le64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

/// Parses a checkpoint. Stiefel constraints are not checked here.
inline TtnParams deserialize_checkpoint(std::vector<unsigned char> bytes) {
    detail::ByteReader in(std::move(bytes));
    char magic[4];
    in.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
    if (const auto v = in.u32(); v != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(v));
    const std::size_t d = in.u32();
    const std::size_t n0 = in.u32();
    if (d > (1u << 20)) throw FormatError("checkpoint: implausible leaf count");
    std::vector<std::size_t> leaves(d);
    for (auto& n : leaves) n = in.u32();
    const std::size_t nb = in.u32();
    if (nb > (1u << 20)) throw FormatError("checkpoint: implausible bond count");
    std::vector<std::size_t> bonds(nb);
    for (auto& r : bonds) r = in.u32();
    TreeTopology topo;
    try {
        topo = build_balanced(leaves, n0, bonds);
    } catch (const TopologyError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    auto params = TtnParams::zeros(topo);
    for (std::size_t k = 0; k < params.node_count(); ++k)
        for (auto& v : params.core(k).values()) v = in.f64();
    if (!in.done()) throw FormatError("checkpoint: trailing bytes");
    return params;
}

inline void save_checkpoint(const std::string& path, const TtnParams& params) {
    const auto bytes = serialize_checkpoint(params);
    std::ofstream f(path, std::ios::binary);
    if (!f.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
        throw FormatError("cannot write " + path);
}

inline TtnParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    return deserialize_checkpoint({std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()});
}

}  // namespace ftn
