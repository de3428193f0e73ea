#pragma once

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "amnerf/common.hpp"
#include "amnerf/field.hpp"
#include "amnerf/sampling.hpp"
#include "amnerf/subdivision.hpp"

namespace amnerf {

/// Contiguous run [begin, end) of the sorted order sharing one node.
struct SampleBatch {
    std::uint32_t node_code = 1;
    int node_index = 0;
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
};

struct SortedSamples {
    std::vector<std::uint32_t> order;  // order[k] = original index of k-th sorted sample
    std::vector<SampleBatch> batches;
};

/// Stable grouping of samples by node code. Within a batch the original
/// (ray, t) order is preserved.
inline SortedSamples sort_samples_by_node(std::span<const PointSample> samples) {
    SortedSamples out;
    out.order.resize(samples.size());
    std::iota(out.order.begin(), out.order.end(), 0u);
    std::stable_sort(out.order.begin(), out.order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return samples[a].node_code < samples[b].node_code;
    });
    for (std::size_t k = 0; k < out.order.size(); ++k) {
        const PointSample& s = samples[out.order[k]];
        if (out.batches.empty() || out.batches.back().node_code != s.node_code)
            out.batches.push_back({s.node_code, s.node_index, k, k});
        out.batches.back().end = k + 1;
    }
    return out;
}

/// Evaluates a tree node's MLP at world positions. One instance per worker.
class MlpNodeEvaluator {
public:
    explicit MlpNodeEvaluator(const KdTree& tree) : tree_(&tree) {}

    FieldSample operator()(int node_index, const Vec3& x, const Vec3& d) {
        const KdNode& n = tree_->nodes[node_index];
        // Samples can sit a rounding error outside the box; no range check here.
        const Vec3 u = (x - n.box.min).cwiseQuotient(n.box.extent());
        return mlp_forward(n.mlp, u, d, ws_);
    }

private:
    const KdTree* tree_;
    MlpWorkspace<float> ws_;
};

/// Ignores node MLPs and queries a field directly; used to check the
/// rendering pipeline against dense reference renders.
template <RadianceField Field>
class FieldNodeEvaluator {
public:
    explicit FieldNodeEvaluator(const Field& f) : field_(&f) {}
    FieldSample operator()(int, const Vec3& x, const Vec3& d) const { return field_->eval(x, d); }

private:
    const Field* field_;
};

struct MlpEvaluatorFactory {
    const KdTree* tree;
    MlpNodeEvaluator operator()() const { return MlpNodeEvaluator(*tree); }
};

template <RadianceField Field>
struct FieldEvaluatorFactory {
    const Field* field;
    FieldNodeEvaluator<Field> operator()() const { return FieldNodeEvaluator<Field>(*field); }
};

/// Runs every batch and scatters results back to original sample indices.
template <typename EvaluatorFactory>
    requires std::invocable<EvaluatorFactory&>
std::vector<FieldSample> infer_batches(const KdTree& tree, std::span<const PointSample> samples,
                                       const SortedSamples& sorted, EvaluatorFactory&& make_evaluator,
                                       unsigned workers = 1) {
    for (const SampleBatch& b : sorted.batches) {
        const int idx = tree.find(b.node_code);
        if (idx < 0) throw InvalidArgument("infer_batches: unknown node code " + std::to_string(b.node_code));
        if (idx != b.node_index) throw InvalidArgument("infer_batches: node index does not match code");
    }
    std::vector<FieldSample> out(samples.size());
    parallel_for(sorted.batches.size(), workers, [&](std::size_t bi) {
        auto eval = make_evaluator();
        const SampleBatch& b = sorted.batches[bi];
        for (std::size_t k = b.begin; k < b.end; ++k) {
            const std::uint32_t i = sorted.order[k];
            out[i] = eval(b.node_index, samples[i].position, samples[i].direction);
        }
    });
    return out;
}

inline std::vector<FieldSample> infer_batches(const KdTree& tree, std::span<const PointSample> samples,
                                              const SortedSamples& sorted, unsigned workers = 1) {
    return infer_batches(tree, samples, sorted, MlpEvaluatorFactory{&tree}, workers);
}

inline constexpr double kDefaultStopTransmittance = 1e-4;

struct CompositeResult {
    Vec3 rgb = Vec3::Zero();
    double transmittance = 1.0;
    double weight_sum = 0.0;
    std::size_t composited = 0;  // samples consumed before termination
};

/// Emission-absorption quadrature over samples sorted by t. Segment lengths
/// are world-space gaps to the next sample (the last one runs to t_far).
/// Stops once transmittance drops below `stop_transmittance`.
inline CompositeResult composite_ray(std::span<const double> ts, std::span<const FieldSample> fields, double t_far,
                                     const Vec3& background, double stop_transmittance = kDefaultStopTransmittance) {
    if (ts.size() != fields.size()) throw InvalidArgument("composite_ray: sample and field counts differ");
    for (std::size_t i = 1; i < ts.size(); ++i)
        if (ts[i] < ts[i - 1]) throw InvalidArgument("composite_ray: samples must be sorted by t");
    CompositeResult r;
    double T = 1.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double delta = (i + 1 < ts.size() ? ts[i + 1] : t_far) - ts[i];
        const double alpha = 1.0 - std::exp(-fields[i].sigma * std::max(delta, 0.0));
        const double w = T * alpha;
        r.rgb += w * fields[i].rgb;
        r.weight_sum += w;
        T *= 1.0 - alpha;
        r.composited = i + 1;
        if (T < stop_transmittance) break;
    }
    r.transmittance = T;
    r.rgb += T * background;
    return r;
}

enum class RenderPath { Batched, Naive };

struct RenderStats {
    double avg_samples_per_ray = 0.0;
    std::size_t total_samples = 0;
    std::size_t total_intervals = 0;
    std::size_t ray_count = 0;
    std::size_t batch_count = 0;
    std::size_t max_batch = 0;
    double mean_batch = 0.0;
    double wall_millis = 0.0;
};

struct RenderOptions {
    HCheckParams hcheck = HCheckParams::leaf_only();
    SamplingConfig sampling;
    Vec3 background = Vec3::Zero();
    double stop_transmittance = kDefaultStopTransmittance;
    RenderPath path = RenderPath::Batched;
    unsigned workers = 1;
};

namespace detail {

inline Vec3 composite_samples(std::span<const PointSample> samples, std::span<const FieldSample> fields, double t_far,
                              const RenderOptions& opt) {
    std::vector<double> ts(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) ts[i] = samples[i].t;
    return composite_ray(ts, fields, t_far, opt.background, opt.stop_transmittance).rgb;
}

}  // namespace detail

/// Renders `rays` through `tree`. The batched path runs
/// traverse -> fill -> sort -> infer -> scatter -> composite; the naive path
/// marches each ray on its own and is the reference for the batched one. Both
/// accumulate each ray in t-order, so their colors are identical.
template <typename EvaluatorFactory>
    requires std::invocable<EvaluatorFactory&>
std::vector<Vec3> render_rays(const KdTree& tree, std::span<const Ray> rays, const RenderOptions& opt,
                              EvaluatorFactory&& make_evaluator, RenderStats* stats = nullptr) {
    opt.sampling.validate();
    if (opt.hcheck.enabled) opt.hcheck.validate();
    const auto start = std::chrono::steady_clock::now();
    std::vector<Vec3> colors(rays.size(), opt.background);
    RenderStats st;
    st.ray_count = rays.size();

    if (opt.path == RenderPath::Naive) {
        std::vector<std::size_t> sample_counts(rays.size()), interval_counts(rays.size());
        parallel_for(rays.size(), opt.workers, [&](std::size_t r) {
            std::vector<Interval> intervals;
            std::vector<PointSample> samples;
            const double t_far = generate_ray_samples(tree, rays[r], opt.hcheck, opt.sampling, intervals, samples);
            auto eval = make_evaluator();
            std::vector<FieldSample> fields;
            fields.reserve(samples.size());
            for (const PointSample& s : samples) fields.push_back(eval(s.node_index, s.position, s.direction));
            colors[r] = detail::composite_samples(samples, fields, t_far, opt);
            sample_counts[r] = samples.size();
            interval_counts[r] = intervals.size();
        });
        st.total_samples = std::accumulate(sample_counts.begin(), sample_counts.end(), std::size_t{0});
        st.total_intervals = std::accumulate(interval_counts.begin(), interval_counts.end(), std::size_t{0});
    } else {
        std::vector<std::vector<PointSample>> per_ray(rays.size());
        std::vector<double> t_far(rays.size());
        std::vector<std::size_t> interval_counts(rays.size());
        parallel_for(rays.size(), opt.workers, [&](std::size_t r) {
            std::vector<Interval> intervals;
            t_far[r] = generate_ray_samples(tree, rays[r], opt.hcheck, opt.sampling, intervals, per_ray[r]);
            interval_counts[r] = intervals.size();
        });
        std::vector<std::size_t> offset(rays.size() + 1, 0);
        for (std::size_t r = 0; r < rays.size(); ++r) offset[r + 1] = offset[r] + per_ray[r].size();
        std::vector<PointSample> samples;
        samples.reserve(offset.back());
        for (auto& v : per_ray) {
            samples.insert(samples.end(), v.begin(), v.end());
            std::vector<PointSample>().swap(v);
        }

        const SortedSamples sorted = sort_samples_by_node(samples);
        const std::vector<FieldSample> fields = infer_batches(tree, samples, sorted, make_evaluator, opt.workers);

        parallel_for(rays.size(), opt.workers, [&](std::size_t r) {
            const std::size_t b = offset[r], n = offset[r + 1] - offset[r];
            colors[r] = detail::composite_samples(std::span(samples).subspan(b, n), std::span(fields).subspan(b, n),
                                                  t_far[r], opt);
        });
        st.total_samples = samples.size();
        st.total_intervals = std::accumulate(interval_counts.begin(), interval_counts.end(), std::size_t{0});
        st.batch_count = sorted.batches.size();
        for (const SampleBatch& b : sorted.batches) st.max_batch = std::max(st.max_batch, b.size());
        st.mean_batch = st.batch_count ? static_cast<double>(st.total_samples) / st.batch_count : 0.0;
    }
    st.avg_samples_per_ray = rays.empty() ? 0.0 : static_cast<double>(st.total_samples) / rays.size();
    st.wall_millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (stats) *stats = st;
    return colors;
}

inline std::vector<Vec3> render_rays(const KdTree& tree, std::span<const Ray> rays, const RenderOptions& opt,
                                     RenderStats* stats = nullptr) {
    return render_rays(tree, rays, opt, MlpEvaluatorFactory{&tree}, stats);
}

}  // namespace amnerf
