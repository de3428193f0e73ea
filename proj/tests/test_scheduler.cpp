#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "amnerf/scheduler.hpp"

using namespace amnerf;

namespace {

struct EmptyField {
    FieldSample eval(const Vec3&, const Vec3&) const { return {0.0, Vec3::Zero()}; }
};

std::vector<PointSample> with_codes(const std::vector<std::uint32_t>& codes) {
    std::vector<PointSample> s(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        s[i].node_code = codes[i];
        s[i].t = static_cast<double>(i);
    }
    return s;
}

// Grid tree whose node networks are random rather than distilled.
KdTree random_grid(std::uint64_t seed) {
    BuildConfig c;
    c.arch = MlpArch{8, 2, 2, 1};
    c.distill.iterations = 0;
    c.score_points = 1;
    c.score_dirs = 1;
    c.seed = seed;
    KdTree t = build_regular_grid(EmptyField{}, Aabb(Vec3(-1, -0.5, 0), Vec3(1, 0.5, 1)), 2, c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.7);
    for (KdNode& node : t.nodes) node.mlp.for_each([&](float& v) { v += static_cast<float>(n(rng)); });
    return t;
}

std::vector<PointSample> samples_in(const KdTree& t, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(t.node_count()) - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<PointSample> s(n);
    for (int i = 0; i < n; ++i) {
        const int idx = pick(rng);
        const KdNode& node = t.nodes[idx];
        s[i].node_code = node.code;
        s[i].node_index = idx;
        s[i].position = node.box.min + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(node.box.extent());
        s[i].direction = Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5).normalized();
        s[i].ray_id = static_cast<std::uint32_t>(i / 4);
    }
    return s;
}

// Riemann-sum radiance of a piecewise-constant field along one ray.
Vec3 fine_quadrature(const std::vector<double>& sigma, const std::vector<Vec3>& rgb, const std::vector<double>& len,
                     int steps_per_unit) {
    Vec3 c = Vec3::Zero();
    double optical = 0;
    for (std::size_t seg = 0; seg < sigma.size(); ++seg) {
        const int steps = static_cast<int>(len[seg] * steps_per_unit);
        const double h = len[seg] / steps;
        for (int k = 0; k < steps; ++k) {
            const double T = std::exp(-(optical + sigma[seg] * (k + 0.5) * h));
            c += T * sigma[seg] * h * rgb[seg];
        }
        optical += sigma[seg] * len[seg];
    }
    return c;
}

}  // namespace

TEST(SortSamples, StableGrouping) {
    const auto s = with_codes({5, 2, 5});
    const SortedSamples r = sort_samples_by_node(s);
    ASSERT_EQ(r.batches.size(), 2u);
    EXPECT_EQ(r.batches[0].node_code, 2u);
    EXPECT_EQ(r.batches[0].size(), 1u);
    EXPECT_EQ(r.batches[1].node_code, 5u);
    EXPECT_EQ(r.batches[1].size(), 2u);
    EXPECT_EQ(r.order, (std::vector<std::uint32_t>{1, 0, 2}));
}

TEST(SortSamples, EmptyAndUniform) {
    EXPECT_TRUE(sort_samples_by_node({}).batches.empty());
    const auto s = with_codes({3, 3, 3, 3});
    const SortedSamples r = sort_samples_by_node(s);
    ASSERT_EQ(r.batches.size(), 1u);
    EXPECT_EQ(r.batches[0].size(), 4u);
}

TEST(SortSamples, BatchesPartitionInput) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::uint32_t> code(1, 40);
    std::vector<std::uint32_t> codes(3000);
    for (auto& c : codes) c = code(rng);
    const auto s = with_codes(codes);
    const SortedSamples r = sort_samples_by_node(s);
    std::size_t covered = 0;
    for (const SampleBatch& b : r.batches) {
        EXPECT_EQ(b.begin, covered);
        for (std::size_t k = b.begin; k < b.end; ++k) {
            EXPECT_EQ(s[r.order[k]].node_code, b.node_code);
            if (k > b.begin) {
                EXPECT_LT(r.order[k - 1], r.order[k]);
            }
        }
        covered = b.end;
    }
    EXPECT_EQ(covered, s.size());
}

TEST(InferBatches, ZeroWeightNetwork) {
    KdTree t = random_grid(1);
    t.nodes[0].mlp = MlpParams(t.arch);
    PointSample s;
    s.node_code = 1;
    s.node_index = 0;
    s.position = t.root().box.center();
    const std::vector<PointSample> v{s};
    const auto out = infer_batches(t, v, sort_samples_by_node(v));
    ASSERT_EQ(out.size(), 1u);
    EXPECT_NEAR(out[0].sigma, std::log(2.0), 1e-6);
    EXPECT_NEAR((out[0].rgb - Vec3::Constant(0.5)).norm(), 0.0, 1e-6);
}

TEST(InferBatches, MatchesDirectEvaluation) {
    const KdTree t = random_grid(2);
    const auto s = samples_in(t, 2000, 3);
    const auto out = infer_batches(t, s, sort_samples_by_node(s), 3);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const KdNode& n = t.nodes[s[i].node_index];
        const FieldSample direct = mlp_forward(n.mlp, normalize_to_node(n.box, s[i].position), s[i].direction);
        EXPECT_EQ(out[i].sigma, direct.sigma);
        EXPECT_EQ(out[i].rgb, direct.rgb);
    }
}

TEST(InferBatches, BatchOrderDoesNotMatter) {
    const KdTree t = random_grid(4);
    const auto s = samples_in(t, 1500, 5);
    SortedSamples sorted = sort_samples_by_node(s);
    const auto a = infer_batches(t, s, sorted);
    std::mt19937_64 rng(6);
    std::shuffle(sorted.batches.begin(), sorted.batches.end(), rng);
    const auto b = infer_batches(t, s, sorted, 4);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(a[i].sigma, b[i].sigma);
        EXPECT_EQ(a[i].rgb, b[i].rgb);
    }
}

TEST(InferBatches, UnknownCodeRejected) {
    const KdTree t = random_grid(7);
    auto s = samples_in(t, 10, 8);
    s[3].node_code = 999;
    EXPECT_THROW(infer_batches(t, s, sort_samples_by_node(s)), InvalidArgument);
}

TEST(Composite, EmptyMediumIsBackground) {
    const std::vector<double> ts{0.1, 0.5, 0.9};
    const std::vector<FieldSample> f(3, FieldSample{0.0, Vec3(1, 1, 1)});
    const auto r = composite_ray(ts, f, 1.0, Vec3(0.2, 0.4, 0.6));
    EXPECT_EQ(r.rgb, Vec3(0.2, 0.4, 0.6));
    EXPECT_EQ(r.transmittance, 1.0);
}

TEST(Composite, OpaqueSingleSample) {
    const std::vector<double> ts{0.0};
    const std::vector<FieldSample> f{{50.0, Vec3(0.3, 0.6, 0.9)}};
    const auto r = composite_ray(ts, f, 1.0, Vec3::Zero());
    EXPECT_NEAR((r.rgb - Vec3(0.3, 0.6, 0.9)).norm(), 0.0, 1e-6);
}

TEST(Composite, TwoSampleClosedFormAgainstFineQuadrature) {
    const std::vector<double> ts{0.0, 1.0};
    const std::vector<FieldSample> f{{1.0, Vec3(1, 0, 0)}, {10.0, Vec3(0, 1, 0)}};
    const Vec3 c = composite_ray(ts, f, 2.0, Vec3::Zero(), 0.0).rgb;
    const Vec3 oracle = fine_quadrature({1.0, 10.0}, {Vec3(1, 0, 0), Vec3(0, 1, 0)}, {1.0, 1.0}, 100000);
    EXPECT_NEAR((c - oracle).norm(), 0.0, 1e-4);
    EXPECT_NEAR(c[0], 0.63212, 1e-4);
    EXPECT_NEAR(c[1], 0.36786, 1e-4);
    EXPECT_EQ(c[2], 0.0);
}

TEST(Composite, RejectsUnsorted) {
    const std::vector<double> ts{0.5, 0.2};
    const std::vector<FieldSample> f(2);
    EXPECT_THROW(composite_ray(ts, f, 1.0, Vec3::Zero()), InvalidArgument);
}

TEST(Composite, PartitionOfUnityAndTelescoping) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        const int n = 1 + trial % 40;
        std::vector<double> ts(n);
        std::vector<FieldSample> f(n);
        double t = 0;
        for (int i = 0; i < n; ++i) {
            t += 0.2 * u(rng);
            ts[i] = t;
            f[i] = {5.0 * u(rng) * u(rng), Vec3(u(rng), u(rng), u(rng))};
        }
        const double t_far = t + 0.2 * u(rng);
        const auto r = composite_ray(ts, f, t_far, Vec3::Zero(), 0.0);
        EXPECT_NEAR(r.weight_sum + r.transmittance, 1.0, 1e-6);
        double optical = 0;
        for (int i = 0; i < n; ++i) optical += f[i].sigma * ((i + 1 < n ? ts[i + 1] : t_far) - ts[i]);
        EXPECT_NEAR(r.transmittance, std::exp(-optical), 1e-6);
    }
}

TEST(Composite, EarlyTerminationBound) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double tau = 1e-4;
    for (int trial = 0; trial < 2000; ++trial) {
        const int n = 5 + trial % 60;
        std::vector<double> ts(n);
        std::vector<FieldSample> f(n);
        for (int i = 0; i < n; ++i) {
            ts[i] = 0.05 * i;
            f[i] = {30.0 * u(rng), Vec3(u(rng), u(rng), u(rng))};
        }
        const Vec3 bg(u(rng), u(rng), u(rng));
        const auto early = composite_ray(ts, f, 0.05 * n, bg, tau);
        const auto full = composite_ray(ts, f, 0.05 * n, bg, 0.0);
        EXPECT_LE((early.rgb - full.rgb).cwiseAbs().maxCoeff(), tau);
        if (early.composited < static_cast<std::size_t>(n)) {
            EXPECT_LT(early.transmittance, tau);
        }
    }
}

TEST(RenderRays, BatchedEqualsNaive) {
    const KdTree t = random_grid(21);
    const Camera cam = Camera::look_at(Vec3(2.5, 1.5, 3), Vec3(0, 0, 0.5), Vec3::UnitY(), 0.8, 24, 20);
    const auto rays = generate_camera_rays(cam);
    RenderOptions opt;
    opt.hcheck = HCheckParams::from_camera(cam, 4.0);
    opt.sampling.max_per_ray = 40;
    opt.background = Vec3(0.1, 0.2, 0.3);
    for (SampleMode m : {SampleMode::Stratified, SampleMode::Halton}) {
        opt.sampling.mode = m;
        opt.path = RenderPath::Batched;
        RenderStats sb, sn;
        const auto a = render_rays(t, rays, opt, &sb);
        opt.path = RenderPath::Naive;
        const auto b = render_rays(t, rays, opt, &sn);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << i;
        EXPECT_EQ(sb.total_samples, sn.total_samples);
        EXPECT_DOUBLE_EQ(sb.avg_samples_per_ray, static_cast<double>(sb.total_samples) / rays.size());
        EXPECT_GT(sb.batch_count, 1u);
    }
}

TEST(RenderRays, NoRays) {
    const KdTree t = random_grid(3);
    RenderStats st;
    st.total_samples = 7;
    EXPECT_TRUE(render_rays(t, {}, RenderOptions{}, &st).empty());
    EXPECT_EQ(st.total_samples, 0u);
    EXPECT_EQ(st.avg_samples_per_ray, 0.0);
}
