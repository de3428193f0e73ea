#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "amnerf/common.hpp"
#include "amnerf/geometry.hpp"
#include "amnerf/subdivision.hpp"

namespace amnerf {

/// Span of one ray inside one emitted tree node.
struct Interval {
    std::uint32_t ray_id = 0;
    std::uint32_t node_code = 1;
    int node_index = 0;
    double t0 = 0.0;
    double t1 = 0.0;
};

struct PointSample {
    std::uint32_t ray_id = 0;
    std::uint32_t node_code = 1;
    int node_index = 0;
    double t = 0.0;
    Vec3 position = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
};

/// Cone-footprint rule for hierarchical sampling: descend into an inner node
/// only while its diagonal exceeds the pixel footprint at the entry distance,
/// scaled by `descend_factor`. With `enabled` false every inner node descends,
/// which gives leaf-only traversal.
struct HCheckParams {
    double footprint_slope = 1e-3;
    double descend_factor = 1.0;
    bool enabled = true;

    static constexpr double kMinDistance = 1e-3;

    static HCheckParams leaf_only() { return {1e-3, 1.0, false}; }
    static HCheckParams from_camera(const Camera& cam, double descend_factor) {
        return {cam.pixel_footprint_slope(), descend_factor, true};
    }
    void validate() const {
        if (!(footprint_slope > 0) || !(descend_factor > 0))
            throw InvalidArgument("HCheckParams: slope and descend factor must be positive");
    }
};

/// True when traversal should descend below `node` for a ray entering at t.
inline bool hcheck(const KdNode& node, double t_enter, const HCheckParams& hp) {
    if (node.is_leaf()) return false;
    if (!hp.enabled) return true;
    const double footprint = hp.descend_factor * hp.footprint_slope * std::max(t_enter, HCheckParams::kMinDistance);
    return node.box.diagonal() > footprint;
}

/// Depth-first, near-child-first traversal. Wherever `descend(node, t)` says
/// stop (always at leaves), the ray is clipped to the node box from the
/// current parameter onward and one interval is emitted. Output is sorted by t
/// and non-overlapping.
template <typename DescendFn>
void traverse_ray(const KdTree& tree, const Ray& ray, DescendFn&& descend, std::vector<Interval>& out) {
    out.clear();
    if (tree.nodes.empty()) return;
    double current_t = 0.0;
    auto visit = [&](auto&& self, int idx) -> void {
        const KdNode& node = tree.nodes[idx];
        const auto span = ray_aabb_intersect(ray, node.box);
        if (!span || span->t_exit <= current_t) return;
        const double t_enter = std::max(span->t_enter, current_t);
        if (!node.is_leaf() && descend(node, t_enter)) {
            const Split& s = *node.split;
            const double d = ray.direction[s.axis];
            const bool left_first = d > 0 || (d == 0 && ray.origin[s.axis] < s.position);
            self(self, left_first ? node.left : node.right);
            self(self, left_first ? node.right : node.left);
            return;
        }
        if (span->t_exit > t_enter) {
            out.push_back({ray.ray_id, node.code, idx, t_enter, span->t_exit});
            current_t = span->t_exit;
        }
    };
    visit(visit, 0);
}

inline std::vector<Interval> traverse_ray(const KdTree& tree, const Ray& ray, const HCheckParams& hp) {
    std::vector<Interval> out;
    traverse_ray(tree, ray, [&](const KdNode& n, double t) { return hcheck(n, t, hp); }, out);
    return out;
}

enum class SampleMode { Stratified, Halton, Uniform };

/// Base-2 radical inverse of i.
inline double radical_inverse_base2(std::uint32_t v) {
    v = ((v >> 1) & 0x55555555u) | ((v & 0x55555555u) << 1);
    v = ((v >> 2) & 0x33333333u) | ((v & 0x33333333u) << 2);
    v = ((v >> 4) & 0x0F0F0F0Fu) | ((v & 0x0F0F0F0Fu) << 4);
    v = ((v >> 8) & 0x00FF00FFu) | ((v & 0x00FF00FFu) << 8);
    v = (v >> 16) | (v << 16);
    return static_cast<double>(v) * 0x1p-32;
}

/// Unit-interval Halton positions 1..n shifted by `shift` modulo 1, in
/// sequence order.
inline std::vector<double> halton_unit_positions(int n, double shift) {
    std::vector<double> u(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i) {
        double v = radical_inverse_base2(static_cast<std::uint32_t>(i + 1)) + shift;
        u[i] = v - std::floor(v);
    }
    return u;
}

namespace detail {

inline double unit_from_bits(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1p-53; }

}  // namespace detail

/// Places `n` samples in `iv` regardless of its length. The interval is
/// normalized to [0,1], filled (one jittered sample per stratum, or a shifted
/// base-2 Halton set), and mapped back to ascending world t.
inline void fill_interval_samples(const Ray& ray, const Interval& iv, int n, SampleMode mode, std::uint64_t seed,
                                  std::vector<PointSample>& out) {
    if (n < 0) throw InvalidArgument("fill_interval_samples: budget must be >= 0");
    if (n == 0) return;
    const std::uint64_t key = mix_seed(seed, iv.ray_id, iv.node_code);
    std::vector<double> unit(static_cast<std::size_t>(n));
    if (mode == SampleMode::Stratified) {
        for (int i = 0; i < n; ++i) unit[i] = (i + detail::unit_from_bits(mix_seed(key, i))) / n;
    } else if (mode == SampleMode::Uniform) {
        for (int i = 0; i < n; ++i) unit[i] = static_cast<double>(i) / n;
    } else {
        unit = halton_unit_positions(n, detail::unit_from_bits(key));
        std::sort(unit.begin(), unit.end());
    }
    const double len = iv.t1 - iv.t0;
    for (double u : unit) {
        PointSample s;
        s.ray_id = iv.ray_id;
        s.node_code = iv.node_code;
        s.node_index = iv.node_index;
        s.t = iv.t0 + u * len;
        s.position = ray.at(s.t);
        s.direction = ray.direction;
        out.push_back(s);
    }
}

inline std::vector<PointSample> fill_interval_samples(const Ray& ray, const Interval& iv, int n, SampleMode mode,
                                                      std::uint64_t seed) {
    std::vector<PointSample> out;
    fill_interval_samples(ray, iv, n, mode, seed, out);
    return out;
}

struct SamplingConfig {
    int budget = 8;            // samples per interval
    int max_per_ray = 192;     // intervals past the cap receive no samples
    SampleMode mode = SampleMode::Stratified;
    std::uint64_t seed = 1;

    void validate() const {
        if (budget < 0 || max_per_ray < 0) throw InvalidArgument("SamplingConfig: counts must be non-negative");
    }
};

/// Samples for one ray, ascending in t. Returns the root exit distance (0 on
/// a miss), which closes the last quadrature segment.
inline double generate_ray_samples(const KdTree& tree, const Ray& ray, const HCheckParams& hp,
                                   const SamplingConfig& cfg, std::vector<Interval>& intervals,
                                   std::vector<PointSample>& out) {
    out.clear();
    traverse_ray(tree, ray, [&](const KdNode& n, double t) { return hcheck(n, t, hp); }, intervals);
    if (intervals.empty()) return 0.0;
    int remaining = cfg.max_per_ray;
    for (const Interval& iv : intervals) {
        const int n = std::min(cfg.budget, remaining);
        if (n <= 0) break;
        fill_interval_samples(ray, iv, n, cfg.mode, cfg.seed, out);
        remaining -= n;
    }
    return intervals.back().t1;
}

}  // namespace amnerf
