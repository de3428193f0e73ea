#pragma once

// Binary tree file ("AMNF"), little-endian:
//   magic "AMNF", version u16
//   architecture: width, depth, levels_pos, levels_dir (u32 each)
//   build snapshot: max_depth u32, seed u64, cloud_points u32, cloud_dirs u32,
//     min_points u32, min_mass f64, leaf_threshold f64, score_points u32,
//     score_dirs u32, iterations u32, batch_size u32, dirs_per_point u32,
//     lr f64, distill seed u64
//   node_count u32, then pre-order node records:
//     code u32, box min/max 6 x f32, split u8 (0 = leaf, 1 + axis),
//     split position f32, score f32, parameter count u32, parameters f32...

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "amnerf/common.hpp"
#include "amnerf/subdivision.hpp"

namespace amnerf {

inline constexpr char kTreeMagic[4] = {'A', 'M', 'N', 'F'};
inline constexpr std::uint16_t kTreeFormatVersion = 1;

namespace detail {

class ByteWriter {
public:
    template <std::unsigned_integral T>
    void put(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void put_raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

    template <std::unsigned_integral T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    void get_raw(char* out, std::size_t n) {
        need(n);
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("tree file: unexpected end of data");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_tree(const KdTree& tree) {
    detail::ByteWriter w;
    w.put_raw(kTreeMagic, 4);
    w.put(kTreeFormatVersion);
    const MlpArch& a = tree.arch;
    w.put(static_cast<std::uint32_t>(a.width));
    w.put(static_cast<std::uint32_t>(a.depth));
    w.put(static_cast<std::uint32_t>(a.levels_pos));
    w.put(static_cast<std::uint32_t>(a.levels_dir));

    const BuildConfig& c = tree.config;
    w.put(static_cast<std::uint32_t>(c.max_depth));
    w.put(static_cast<std::uint64_t>(c.seed));
    w.put(static_cast<std::uint32_t>(c.cloud_points));
    w.put(static_cast<std::uint32_t>(c.cloud_dirs));
    w.put(static_cast<std::uint32_t>(c.min_points));
    w.put_f64(c.min_mass);
    w.put_f64(c.leaf_threshold);
    w.put(static_cast<std::uint32_t>(c.score_points));
    w.put(static_cast<std::uint32_t>(c.score_dirs));
    w.put(static_cast<std::uint32_t>(c.distill.iterations));
    w.put(static_cast<std::uint32_t>(c.distill.batch_size));
    w.put(static_cast<std::uint32_t>(c.distill.dirs_per_point));
    w.put_f64(c.distill.lr);
    w.put(static_cast<std::uint64_t>(c.distill.seed));

    w.put(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const KdNode& n : tree.nodes) {
        w.put(n.code);
        for (int k = 0; k < 3; ++k) w.put_f32(static_cast<float>(n.box.min[k]));
        for (int k = 0; k < 3; ++k) w.put_f32(static_cast<float>(n.box.max[k]));
        w.put(static_cast<std::uint8_t>(n.split ? 1 + n.split->axis : 0));
        w.put_f32(n.split ? static_cast<float>(n.split->position) : 0.0f);
        w.put_f32(n.score);
        const std::vector<float> flat = n.mlp.flatten();
        w.put(static_cast<std::uint32_t>(flat.size()));
        for (float v : flat) w.put_f32(v);
    }
    return w.take();
}

inline KdTree deserialize_tree(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r(bytes);
    char magic[4];
    r.get_raw(magic, 4);
    if (std::memcmp(magic, kTreeMagic, 4) != 0) throw FormatError("tree file: bad magic");
    const auto version = r.get<std::uint16_t>();
    if (version != kTreeFormatVersion) throw FormatError("tree file: unsupported version " + std::to_string(version));

    KdTree tree;
    MlpArch& a = tree.arch;
    a.width = static_cast<int>(r.get<std::uint32_t>());
    a.depth = static_cast<int>(r.get<std::uint32_t>());
    a.levels_pos = static_cast<int>(r.get<std::uint32_t>());
    a.levels_dir = static_cast<int>(r.get<std::uint32_t>());

    BuildConfig& c = tree.config;
    c.arch = a;
    c.max_depth = static_cast<int>(r.get<std::uint32_t>());
    c.seed = r.get<std::uint64_t>();
    c.cloud_points = static_cast<int>(r.get<std::uint32_t>());
    c.cloud_dirs = static_cast<int>(r.get<std::uint32_t>());
    c.min_points = static_cast<int>(r.get<std::uint32_t>());
    c.min_mass = r.get_f64();
    c.leaf_threshold = r.get_f64();
    c.score_points = static_cast<int>(r.get<std::uint32_t>());
    c.score_dirs = static_cast<int>(r.get<std::uint32_t>());
    c.distill.iterations = static_cast<int>(r.get<std::uint32_t>());
    c.distill.batch_size = static_cast<int>(r.get<std::uint32_t>());
    c.distill.dirs_per_point = static_cast<int>(r.get<std::uint32_t>());
    c.distill.lr = r.get_f64();
    c.distill.seed = r.get<std::uint64_t>();
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("tree file: invalid header: ") + e.what());
    }

    const auto count = r.get<std::uint32_t>();
    if (count == 0 || count > (std::uint64_t{2} << c.max_depth) - 1) throw FormatError("tree file: bad node count");
    tree.nodes.resize(count);
    for (KdNode& n : tree.nodes) {
        n.code = r.get<std::uint32_t>();
        if (n.code == 0) throw FormatError("tree file: node code 0");
        n.depth = depth_of_code(n.code);
        Vec3 lo, hi;
        for (int k = 0; k < 3; ++k) lo[k] = r.get_f32();
        for (int k = 0; k < 3; ++k) hi[k] = r.get_f32();
        try {
            n.box = Aabb(lo, hi);
        } catch (const InvalidArgument&) {
            throw FormatError("tree file: degenerate node box");
        }
        const auto split = r.get<std::uint8_t>();
        const float pos = r.get_f32();
        if (split > 3) throw FormatError("tree file: bad split tag");
        if (split != 0) n.split = Split{split - 1, static_cast<double>(pos)};
        n.score = r.get_f32();
        const auto np = r.get<std::uint32_t>();
        if (np != a.param_count()) throw FormatError("tree file: parameter blob has wrong length");
        std::vector<float> flat(np);
        for (float& v : flat) v = r.get_f32();
        try {
            n.mlp = MlpParams::unflatten(a, flat);
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("tree file: ") + e.what());
        }
    }
    if (!r.at_end()) throw FormatError("tree file: trailing bytes");

    // Rebuild child links from the pre-order layout.
    std::size_t next = 0;
    auto link = [&](auto&& self, std::uint32_t expected_code) -> int {
        if (next >= tree.nodes.size()) throw FormatError("tree file: truncated pre-order node list");
        const int idx = static_cast<int>(next++);
        if (tree.nodes[idx].code != expected_code) throw FormatError("tree file: node codes out of pre-order");
        if (tree.nodes[idx].depth > c.max_depth) throw FormatError("tree file: node deeper than max depth");
        if (!tree.nodes[idx].is_leaf()) {
            const int l = self(self, 2 * expected_code);
            const int rr = self(self, 2 * expected_code + 1);
            tree.nodes[idx].left = l;
            tree.nodes[idx].right = rr;
        }
        return idx;
    };
    link(link, 1);
    if (next != tree.nodes.size()) throw FormatError("tree file: unreachable nodes");
    tree.index();
    try {
        tree.check();
    } catch (const std::exception& e) {
        throw FormatError(std::string("tree file: ") + e.what());
    }
    return tree;
}

inline void save_tree(const KdTree& tree, const std::string& path) {
    const auto bytes = serialize_tree(tree);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + path);
}

inline KdTree load_tree(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_tree(bytes);
}

}  // namespace amnerf
