#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "amnerf/training.hpp"

using namespace amnerf;

namespace {

struct ConstantField {
    double sigma = 0.0;
    Vec3 rgb = Vec3::Zero();
    FieldSample eval(const Vec3&, const Vec3&) const { return {sigma, rgb}; }
};

AnalyticScene blob_scene() {
    Blob b;
    b.center = Vec3(0.5, 0.45, 0.55);
    b.stddev = 0.15;
    b.amplitude = 6.0;
    b.color = Vec3(0.8, 0.3, 0.5);
    b.view_dependence = 0.3;
    return AnalyticScene(Aabb::unit(), {b});
}

std::vector<TrainingExample> random_batch(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TrainingExample> batch;
    for (int i = 0; i < n; ++i) {
        TrainingExample e;
        e.x_unit = random_unit_point(rng);
        e.dir = random_unit_vector(rng);
        e.target.sigma = 3.0 * u(rng);
        e.target.rgb = Vec3(u(rng), u(rng), u(rng));
        batch.push_back(e);
    }
    return batch;
}

}  // namespace

TEST(MlpBackward, ZeroAtExactTargets) {
    const auto p = init_mlp<double>(MlpArch{12, 3, 3, 2}, 4);
    auto batch = random_batch(16, 1);
    for (auto& e : batch) e.target = mlp_forward(p, e.x_unit, e.dir);
    const auto g = mlp_backward(p, batch);
    EXPECT_LT(g.loss, 1e-24);
    g.grads.for_each([](double v) { EXPECT_LT(std::abs(v), 1e-12); });
}

TEST(MlpBackward, LossMatchesForwardPath) {
    const auto p = init_mlp<double>(MlpArch{10, 2, 2, 1}, 8);
    const auto batch = random_batch(20, 3);
    EXPECT_NEAR(mlp_backward(p, batch).loss, mlp_loss(p, batch), 1e-12);
}

// Central finite differences (h = 1e-4) in double precision.
TEST(MlpBackward, FiniteDifferenceOracle) {
    std::mt19937_64 rng(2024);
    int probed = 0, agreed = 0;
    for (int arch_i = 0; arch_i < 10; ++arch_i) {
        const MlpArch arch{3 + arch_i, 1 + arch_i % 4, arch_i % 4, arch_i % 3};
        auto params = init_mlp<double>(arch, 100 + arch_i);
        std::normal_distribution<double> jitter(0.0, 0.1);
        params.for_each([&](double& v) { v += jitter(rng); });
        const auto batch = random_batch(1 + arch_i % 5, 500 + arch_i);
        const auto analytic = mlp_backward(params, batch).grads.flatten();
        auto flat = params.flatten();
        std::uniform_int_distribution<std::size_t> pick(0, flat.size() - 1);
        for (int probe = 0; probe < 40; ++probe) {
            const std::size_t k = pick(rng);
            const double h = 1e-4, orig = flat[k];
            flat[k] = orig + h;
            const double lp = mlp_loss(MlpParamsT<double>::unflatten(arch, flat), batch);
            flat[k] = orig - h;
            const double lm = mlp_loss(MlpParamsT<double>::unflatten(arch, flat), batch);
            flat[k] = orig;
            const double numeric = (lp - lm) / (2 * h);
            const double scale = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-8});
            ++probed;
            if (std::abs(numeric - analytic[k]) <= 1e-3 * scale) ++agreed;
        }
    }
    EXPECT_GE(agreed, static_cast<int>(std::ceil(0.99 * probed))) << agreed << "/" << probed;
}

TEST(MlpBackward, BatchGradientIsMeanOfSingles) {
    const auto p = init_mlp<double>(MlpArch{8, 2, 2, 1}, 5);
    const auto batch = random_batch(2, 9);
    const auto g2 = mlp_backward(p, batch).grads.flatten();
    const auto ga = mlp_backward(p, {batch[0]}).grads.flatten();
    const auto gb = mlp_backward(p, {batch[1]}).grads.flatten();
    for (std::size_t i = 0; i < g2.size(); ++i) EXPECT_NEAR(g2[i], 0.5 * (ga[i] + gb[i]), 1e-12);
}

TEST(MlpBackward, RejectsEmptyBatch) {
    const MlpParamsT<double> p(MlpArch{4, 1, 0, 0});
    EXPECT_THROW(mlp_backward(p, {}), InvalidArgument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    const MlpArch arch{4, 1, 0, 0};
    MlpParamsT<double> p = init_mlp<double>(arch, 1);
    const MlpParamsT<double> before = p;
    MlpParamsT<double> g(arch);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 2.0);
    int sign = 1;
    g.for_each([&](double& v) { v = (sign = -sign) * u(rng); });
    AdamState<double> st(arch, 0.1);
    adam_step(p, g, st);
    EXPECT_EQ(st.step, 1u);
    const auto a = before.flatten(), b = p.flatten(), gf = g.flatten();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double delta = b[i] - a[i];
        EXPECT_GE(std::abs(delta), 0.099);
        EXPECT_LE(std::abs(delta), 0.1);
        EXPECT_LT(delta * gf[i], 0.0);
    }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
    const MlpArch arch{4, 2, 1, 1};
    MlpParamsT<double> p = init_mlp<double>(arch, 2);
    const MlpParamsT<double> before = p;
    AdamState<double> st(arch, 0.1);
    adam_step(p, MlpParamsT<double>(arch), st);
    EXPECT_TRUE(p == before);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, MinimizesQuadratic) {
    // Oracle: the scalar Adam recurrence written out by hand.
    double w_ref = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 200; ++t) {
        const double g = 2 * w_ref;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w_ref -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    ASSERT_LT(std::abs(w_ref), 0.1);

    const MlpArch arch{1, 1, 0, 0};
    MlpParamsT<double> p(arch);
    p.for_each([](double& x) { x = 1.0; });
    AdamState<double> st(arch, 0.05);
    for (int t = 0; t < 200; ++t) {
        MlpParamsT<double> g = p;
        g.for_each([](double& x) { x *= 2; });
        adam_step(p, g, st);
    }
    p.for_each([&](double x) {
        EXPECT_LT(std::abs(x), 0.1);
        EXPECT_NEAR(x, w_ref, 1e-12);
    });
}

TEST(Distill, ZeroIterationsReturnsInit) {
    DistillConfig cfg;
    cfg.iterations = 0;
    cfg.seed = 77;
    const MlpArch arch{8, 2, 2, 1};
    const auto r = distill_node<float>(blob_scene(), Aabb::unit(), arch, cfg);
    EXPECT_TRUE(r.params == init_mlp<float>(arch, 77));
}

TEST(Distill, DeterministicForSeed) {
    DistillConfig cfg;
    cfg.iterations = 50;
    cfg.batch_size = 64;
    cfg.seed = 5;
    const MlpArch arch{16, 2, 2, 1};
    const auto a = distill_node<float>(blob_scene(), Aabb::unit(), arch, cfg);
    const auto b = distill_node<float>(blob_scene(), Aabb::unit(), arch, cfg);
    EXPECT_TRUE(a.params == b.params);
    EXPECT_EQ(a.final_loss, b.final_loss);
    cfg.seed = 6;
    EXPECT_FALSE(distill_node<float>(blob_scene(), Aabb::unit(), arch, cfg).params == a.params);
}

TEST(Distill, EmptyTeacherDrivesDensityDown) {
    DistillConfig cfg;
    cfg.iterations = 2000;
    cfg.batch_size = 256;
    cfg.seed = 3;
    const MlpArch arch{32, 4, 4, 2};
    const Aabb box(Vec3(1, 1, 1), Vec3(2, 3, 1.5));
    const auto r = distill_node<float>(ConstantField{}, box, arch, cfg, true);
    EXPECT_LT(r.final_loss, r.initial_loss);

    double mean_sigma = 0;
    int n = 0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            for (int k = 0; k < 8; ++k, ++n)
                mean_sigma += mlp_forward(r.params, Vec3((i + 0.5) / 8, (j + 0.5) / 8, (k + 0.5) / 8), Vec3::UnitY()).sigma;
    EXPECT_LT(mean_sigma / n, 0.05);

    // Smoothed loss curve goes down.
    const auto& h = r.loss_history;
    ASSERT_EQ(h.size(), 2000u);
    const double first = std::accumulate(h.begin(), h.begin() + 50, 0.0);
    const double last = std::accumulate(h.end() - 50, h.end(), 0.0);
    EXPECT_LT(last, first);
}

TEST(NodeScore, ExactStudentHitsCap) {
    const AnalyticScene s = blob_scene();
    EXPECT_EQ(node_score(s, s, Aabb::unit(), 256, 2, 1), kPsnrCapDb);
}

TEST(NodeScore, ConstantResidualIsTwentyDb) {
    const ConstantField teacher{0.0, Vec3(0.2, 0.3, 0.4)};
    const ConstantField student{0.1 * kScoreSigmaCap, Vec3(0.3, 0.4, 0.5)};
    EXPECT_NEAR(node_score(teacher, student, Aabb::unit(), 64, 2, 9), 20.0, 1e-9);
}

TEST(NodeScore, SigmaClampedAtCap) {
    const ConstantField teacher{100.0, Vec3::Zero()};
    const ConstantField student{kScoreSigmaCap, Vec3::Zero()};
    EXPECT_EQ(node_score(teacher, student, Aabb::unit(), 16, 1, 2), kPsnrCapDb);
}

TEST(NodeScore, IndependentOfEvaluationOrder) {
    const AnalyticScene teacher = blob_scene();
    const auto student = init_mlp<float>(MlpArch{8, 2, 2, 1}, 3);
    const Aabb box = Aabb::unit();
    const double score = node_score(teacher, student, box, 200, 3, 11);
    auto queries = score_queries(box, 200, 3, 11);
    std::reverse(queries.begin(), queries.end());
    const NodeMlpField<float> sf{&student, box};
    double sum = 0;
    for (const auto& q : queries) sum += score_residual(teacher.eval(q.x, q.dir), sf.eval(q.x, q.dir));
    EXPECT_NEAR(score, psnr_from_mse(sum / (4.0 * queries.size())), 1e-9);
}

TEST(NodeScore, RejectsEmptyEvaluationSet) {
    const AnalyticScene s = blob_scene();
    EXPECT_THROW(node_score(s, s, Aabb::unit(), 0, 1, 1), InvalidArgument);
}
