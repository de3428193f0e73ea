#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "amnerf/common.hpp"
#include "amnerf/field.hpp"
#include "amnerf/geometry.hpp"
#include "amnerf/training.hpp"

namespace amnerf {

// ---------------------------------------------------------------------------
// Density point cloud

struct CloudPoint {
    Vec3 position;
    double density = 0.0;
    Vec3 mean_rgb = Vec3::Zero();
};

struct DensityCloud {
    std::vector<CloudPoint> points;

    double total_density() const {
        double s = 0;
        for (const CloudPoint& p : points) s += p.density;
        return s;
    }
};

/// Uniform seeded positions in `box`, each labelled with the teacher's density
/// and color averaged over `n_dirs` random directions. Densities are rescaled
/// so the maximum is 1 (left untouched when the field is empty).
template <RadianceField Teacher>
DensityCloud sample_density_cloud(const Teacher& teacher, const Aabb& box, int n, int n_dirs, std::uint64_t seed) {
    if (n < 1 || n_dirs < 1) throw InvalidArgument("sample_density_cloud: n and nDirs must be >= 1");
    DensityCloud cloud;
    cloud.points.reserve(n);
    std::mt19937_64 rng(mix_seed(seed, 0xC10D));
    double max_density = 0;
    for (int i = 0; i < n; ++i) {
        CloudPoint p;
        p.position = from_unit(box, random_unit_point(rng));
        for (int k = 0; k < n_dirs; ++k) {
            const FieldSample s = teacher.eval(p.position, random_unit_vector(rng));
            p.density += s.sigma;
            p.mean_rgb += s.rgb;
        }
        p.density /= n_dirs;
        p.mean_rgb /= n_dirs;
        max_density = std::max(max_density, p.density);
        cloud.points.push_back(p);
    }
    if (max_density > 0)
        for (CloudPoint& p : cloud.points) p.density /= max_density;
    return cloud;
}

// ---------------------------------------------------------------------------
// Split selection

struct Split {
    int axis = 0;
    double position = 0.0;
    bool fallback = false;  // spatial midpoint, not a density median
    double left_mass = 0.0;
    double right_mass = 0.0;
};

namespace detail {

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Rounds a split plane to a float-representable value and reports whether it
/// still lies strictly inside the box.
inline std::optional<double> representable_split(const Aabb& box, int axis, double position) {
    const double p = to_f32(position);
    if (box.min[axis] < p && p < box.max[axis]) return p;
    return std::nullopt;
}

inline Split midpoint_split(const Aabb& box) {
    Split s;
    s.axis = box.longest_axis();
    s.position = to_f32(box.center()[s.axis]);
    s.fallback = true;
    return s;
}

}  // namespace detail

/// Mass imbalances closer than this fraction of the node's mass count as ties.
inline constexpr double kSplitBalanceTolerance = 0.1;

/// Density-median split over the points `indices` of `cloud`. For each axis
/// the points are sorted by coordinate and the plane is placed halfway between
/// the point where cumulative density first reaches half the total and its
/// successor. The axis whose plane best balances the two masses wins; ties
/// (within kSplitBalanceTolerance of the mass) go to the larger box extent,
/// then the lower axis index. Falls back to the longest-axis midpoint when no
/// density-median plane lies inside the box.
inline Split choose_split(const DensityCloud& cloud, const std::vector<std::uint32_t>& indices, const Aabb& box) {
    double total = 0;
    for (std::uint32_t i : indices) total += cloud.points[i].density;
    if (indices.size() < 2 || !(total > 0)) return detail::midpoint_split(box);

    std::optional<Split> best;
    std::vector<std::uint32_t> order(indices);
    for (int axis = 0; axis < 3; ++axis) {
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return cloud.points[a].position[axis] < cloud.points[b].position[axis];
        });
        double cum = 0;
        std::size_t k = 0;
        for (; k < order.size(); ++k) {
            cum += cloud.points[order[k]].density;
            if (cum >= 0.5 * total) break;
        }
        if (k + 1 >= order.size()) continue;
        const double mid =
            0.5 * (cloud.points[order[k]].position[axis] + cloud.points[order[k + 1]].position[axis]);
        const auto pos = detail::representable_split(box, axis, mid);
        if (!pos) continue;
        Split s;
        s.axis = axis;
        s.position = *pos;
        for (std::uint32_t i : indices) {
            const CloudPoint& p = cloud.points[i];
            (goes_right(p.position, axis, s.position) ? s.right_mass : s.left_mass) += p.density;
        }
        if (!best) {
            best = s;
            continue;
        }
        const double imb = std::abs(s.left_mass - s.right_mass);
        const double best_imb = std::abs(best->left_mass - best->right_mass);
        const bool tie = std::abs(imb - best_imb) <= kSplitBalanceTolerance * total;
        if ((!tie && imb < best_imb) || (tie && box.extent()[axis] > box.extent()[best->axis])) best = s;
    }
    if (!best) return detail::midpoint_split(box);
    return *best;
}

inline Split choose_split(const DensityCloud& cloud, const Aabb& box) {
    std::vector<std::uint32_t> all(cloud.points.size());
    std::iota(all.begin(), all.end(), 0u);
    return choose_split(cloud, all, box);
}

// ---------------------------------------------------------------------------
// Tree

struct BuildConfig {
    int cloud_points = 65536;
    int cloud_dirs = 8;
    int max_depth = 10;
    int min_points = 64;
    double min_mass = 1e-6;
    double leaf_threshold = 0.01;  // relative score change below which a node stops splitting
    int score_points = 1024;
    int score_dirs = 2;
    MlpArch arch;
    DistillConfig distill;
    std::uint64_t seed = 1;
    unsigned workers = 1;

    void validate() const {
        arch.validate();
        distill.validate();
        if (cloud_points < 1 || cloud_dirs < 1 || min_points < 0 || score_points < 1 || score_dirs < 1)
            throw InvalidArgument("BuildConfig: sample counts must be positive");
        if (max_depth < 0 || max_depth > 30) throw InvalidArgument("BuildConfig: max depth must be in [0, 30]");
        if (!(leaf_threshold >= 0) || !(min_mass >= 0)) throw InvalidArgument("BuildConfig: thresholds must be >= 0");
    }
};

struct KdNode {
    Aabb box;
    std::uint32_t code = 1;
    int depth = 0;
    std::optional<Split> split;
    int left = -1;   // index into KdTree::nodes
    int right = -1;
    MlpParams mlp;
    float score = 0.0f;

    // Build-time bookkeeping; not persisted.
    std::uint32_t cloud_points = 0;
    double cloud_mass = 0.0;

    bool is_leaf() const { return !split.has_value(); }
};

inline int depth_of_code(std::uint32_t code) { return std::bit_width(code) - 1; }

/// Child-side bits from the root, most significant first (false = left).
inline std::vector<bool> code_to_path(std::uint32_t code) {
    if (code == 0) throw InvalidArgument("code_to_path: codes start at 1");
    std::vector<bool> path;
    for (int b = depth_of_code(code) - 1; b >= 0; --b) path.push_back(((code >> b) & 1u) != 0);
    return path;
}

inline std::uint32_t path_to_code(const std::vector<bool>& path) {
    std::uint32_t code = 1;
    for (bool right : path) code = code * 2 + (right ? 1 : 0);
    return code;
}

/// Nodes are stored in pre-order; index 0 is the root.
struct KdTree {
    MlpArch arch;
    BuildConfig config;
    std::vector<KdNode> nodes;

    const KdNode& root() const { return nodes.at(0); }
    std::size_t node_count() const { return nodes.size(); }
    std::size_t leaf_count() const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const KdNode& n) { return n.is_leaf(); }));
    }
    int max_depth() const {
        int d = 0;
        for (const KdNode& n : nodes) d = std::max(d, n.depth);
        return d;
    }

    /// Rebuilds the code lookup; call after editing `nodes`.
    void index() {
        by_code_.clear();
        for (std::size_t i = 0; i < nodes.size(); ++i) by_code_[nodes[i].code] = static_cast<int>(i);
    }

    int find(std::uint32_t code) const {
        auto it = by_code_.find(code);
        return it == by_code_.end() ? -1 : it->second;
    }

    const KdNode& at_code(std::uint32_t code) const {
        const int i = find(code);
        if (i < 0) throw InvalidArgument("KdTree: unknown node code " + std::to_string(code));
        return nodes[i];
    }

    /// Index of the leaf containing p (right-closed split convention), or -1
    /// when p is outside the root box.
    int locate_leaf(const Vec3& p) const {
        if (nodes.empty() || !root().box.contains(p)) return -1;
        int i = 0;
        while (!nodes[i].is_leaf()) {
            const Split& s = *nodes[i].split;
            i = goes_right(p, s.axis, s.position) ? nodes[i].right : nodes[i].left;
        }
        return i;
    }

    /// Checks structural invariants; throws InvariantError on violation.
    void check() const {
        if (nodes.empty()) throw InvariantError("KdTree: empty");
        if (nodes.size() > (std::size_t{2} << config.max_depth) - 1)
            throw InvariantError("KdTree: node count exceeds binary-tree bound");
        for (const KdNode& n : nodes) {
            if (depth_of_code(n.code) != n.depth) throw InvariantError("KdTree: depth does not match code");
            if (n.depth > config.max_depth) throw InvariantError("KdTree: depth exceeds max depth");
            if (n.is_leaf() != (n.left < 0) || n.is_leaf() != (n.right < 0))
                throw InvariantError("KdTree: leaf/children mismatch");
            if (!n.is_leaf()) {
                const auto [l, r] = aabb_split(n.box, n.split->axis, n.split->position);
                const KdNode& L = nodes.at(n.left);
                const KdNode& R = nodes.at(n.right);
                if (!(L.box == l) || !(R.box == r)) throw InvariantError("KdTree: children do not match split");
                if (L.code != 2 * n.code || R.code != 2 * n.code + 1)
                    throw InvariantError("KdTree: child codes inconsistent");
            }
            if (!(n.mlp.arch == arch)) throw InvariantError("KdTree: node architecture differs from tree");
        }
    }

private:
    std::unordered_map<std::uint32_t, int> by_code_;
};

/// Maps a point of `box` into [0,1]^3.
inline Vec3 normalize_to_node(const Aabb& box, const Vec3& x) {
    if (!box.contains(x)) throw InvalidArgument("normalize_to_node: point outside node box");
    return (x - box.min).cwiseQuotient(box.extent());
}

/// Stopping inputs for one node beyond its score.
struct LeafTestInput {
    float score = 0.0f;
    int depth = 0;
    std::uint32_t cloud_points = 0;
    double cloud_mass = 0.0;
};

/// True when the node should stay a leaf: its score differs from the parent's
/// by at most the relative threshold, it sits at the depth limit, or its slice
/// of the cloud is too thin to split.
inline bool test_leaf(const LeafTestInput& node, double parent_score, const BuildConfig& cfg) {
    if (node.depth >= cfg.max_depth) return true;
    if (node.cloud_points < static_cast<std::uint32_t>(cfg.min_points) || node.cloud_mass < cfg.min_mass) return true;
    if (!std::isfinite(parent_score)) return false;
    return std::abs(static_cast<double>(node.score) - parent_score) <= cfg.leaf_threshold * std::abs(parent_score);
}

inline bool test_leaf(const KdNode& node, double parent_score, const BuildConfig& cfg) {
    return test_leaf(LeafTestInput{node.score, node.depth, node.cloud_points, node.cloud_mass}, parent_score, cfg);
}

namespace detail {

inline Aabb to_f32_box(const Aabb& b) {
    Vec3 lo, hi;
    for (int k = 0; k < 3; ++k) {
        lo[k] = to_f32(b.min[k]);
        hi[k] = to_f32(b.max[k]);
    }
    return Aabb(lo, hi);
}

template <RadianceField Teacher>
void distill_and_score(const Teacher& teacher, const BuildConfig& cfg, KdNode& node) {
    DistillConfig dc = cfg.distill;
    dc.seed = mix_seed(cfg.seed, node.code, 0xD1);
    node.mlp = distill_node<float>(teacher, node.box, cfg.arch, dc).params;
    node.score = static_cast<float>(
        node_score(teacher, node.mlp, node.box, cfg.score_points, cfg.score_dirs, mix_seed(cfg.seed, node.code, 0x5C)));
}

/// Orders nodes by code into pre-order and wires child indices.
inline KdTree assemble(std::vector<KdNode> unordered, const BuildConfig& cfg) {
    std::unordered_map<std::uint32_t, std::size_t> pos;
    for (std::size_t i = 0; i < unordered.size(); ++i) pos[unordered[i].code] = i;
    KdTree tree;
    tree.arch = cfg.arch;
    tree.config = cfg;
    tree.nodes.reserve(unordered.size());
    auto visit = [&](auto&& self, std::uint32_t code) -> int {
        const int idx = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(std::move(unordered[pos.at(code)]));
        if (!tree.nodes[idx].is_leaf()) {
            const int l = self(self, 2 * code);
            const int r = self(self, 2 * code + 1);
            tree.nodes[idx].left = l;
            tree.nodes[idx].right = r;
        }
        return idx;
    };
    visit(visit, 1);
    tree.index();
    return tree;
}

}  // namespace detail

/// Density-aware KD-tree. The cloud is sampled once at the root and
/// partitioned down. Every node (inner ones included) keeps its distilled MLP.
/// Nodes are processed level by level; each level's distillations run in
/// parallel with seeds derived from node codes.
template <RadianceField Teacher>
KdTree build_kdtree(const Teacher& teacher, const Aabb& root_box, const BuildConfig& cfg) {
    cfg.validate();
    const Aabb root = detail::to_f32_box(root_box);
    const DensityCloud cloud = sample_density_cloud(teacher, root, cfg.cloud_points, cfg.cloud_dirs, cfg.seed);

    struct Pending {
        KdNode node;
        std::vector<std::uint32_t> slice;
        double parent_score;
    };
    std::vector<KdNode> done;
    std::vector<Pending> frontier(1);
    frontier[0].node.box = root;
    frontier[0].node.code = 1;
    frontier[0].slice.resize(cloud.points.size());
    std::iota(frontier[0].slice.begin(), frontier[0].slice.end(), 0u);
    // The root has no parent to compare against; it always attempts a split
    // unless the other stopping rules apply.
    frontier[0].parent_score = std::numeric_limits<double>::infinity();

    while (!frontier.empty()) {
        parallel_for(frontier.size(), cfg.workers, [&](std::size_t i) {
            Pending& p = frontier[i];
            p.node.cloud_points = static_cast<std::uint32_t>(p.slice.size());
            p.node.cloud_mass = 0;
            for (std::uint32_t j : p.slice) p.node.cloud_mass += cloud.points[j].density;
            detail::distill_and_score(teacher, cfg, p.node);
        });
        std::vector<Pending> next;
        for (Pending& p : frontier) {
            KdNode& n = p.node;
            if (!test_leaf(n, p.parent_score, cfg)) {
                Split s = choose_split(cloud, p.slice, n.box);
                const auto [lbox, rbox] = aabb_split(n.box, s.axis, s.position);
                Pending l, r;
                l.node.box = lbox;
                r.node.box = rbox;
                l.node.code = 2 * n.code;
                r.node.code = 2 * n.code + 1;
                l.node.depth = r.node.depth = n.depth + 1;
                l.parent_score = r.parent_score = n.score;
                s.left_mass = s.right_mass = 0;
                for (std::uint32_t j : p.slice) {
                    const CloudPoint& cp = cloud.points[j];
                    if (goes_right(cp.position, s.axis, s.position)) {
                        r.slice.push_back(j);
                        s.right_mass += cp.density;
                    } else {
                        l.slice.push_back(j);
                        s.left_mass += cp.density;
                    }
                }
                n.split = s;
                next.push_back(std::move(l));
                next.push_back(std::move(r));
            }
            done.push_back(std::move(n));
        }
        frontier = std::move(next);
    }
    return detail::assemble(std::move(done), cfg);
}

/// Regular r x r x r grid expressed as a KD-tree of midpoint splits cycling
/// x, y, z. Inner nodes are distilled too so both tree kinds share one format.
template <RadianceField Teacher>
KdTree build_regular_grid(const Teacher& teacher, const Aabb& root_box, int resolution, BuildConfig cfg) {
    if (resolution < 1 || !std::has_single_bit(static_cast<unsigned>(resolution)))
        throw InvalidArgument("build_regular_grid: resolution must be a power of two");
    const int depth = 3 * std::countr_zero(static_cast<unsigned>(resolution));
    cfg.max_depth = depth;
    cfg.validate();
    const Aabb root = detail::to_f32_box(root_box);

    std::vector<KdNode> nodes;
    std::vector<KdNode> level(1);
    level[0].box = root;
    level[0].code = 1;
    while (!level.empty()) {
        parallel_for(level.size(), cfg.workers, [&](std::size_t i) { detail::distill_and_score(teacher, cfg, level[i]); });
        std::vector<KdNode> next;
        for (KdNode& n : level) {
            if (n.depth < depth) {
                Split s;
                s.axis = n.depth % 3;
                s.position = detail::to_f32(n.box.center()[s.axis]);
                const auto [lbox, rbox] = aabb_split(n.box, s.axis, s.position);
                KdNode l, r;
                l.box = lbox;
                r.box = rbox;
                l.code = 2 * n.code;
                r.code = 2 * n.code + 1;
                l.depth = r.depth = n.depth + 1;
                n.split = s;
                next.push_back(std::move(l));
                next.push_back(std::move(r));
            }
            nodes.push_back(std::move(n));
        }
        level = std::move(next);
    }
    return detail::assemble(std::move(nodes), cfg);
}

/// The tree that building with `max_depth` would have produced: nodes below
/// the limit are dropped and nodes at the limit become leaves.
inline KdTree truncate_depth(const KdTree& tree, int max_depth) {
    std::vector<KdNode> kept;
    for (const KdNode& n : tree.nodes) {
        if (n.depth > max_depth) continue;
        KdNode c = n;
        if (c.depth == max_depth) c.split.reset();
        c.left = c.right = -1;
        kept.push_back(std::move(c));
    }
    BuildConfig cfg = tree.config;
    cfg.max_depth = std::min(cfg.max_depth, max_depth);
    return detail::assemble(std::move(kept), cfg);
}

}  // namespace amnerf
