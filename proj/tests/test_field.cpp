#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "amnerf/field.hpp"
#include "amnerf/training.hpp"

using namespace amnerf;

TEST(FrequencyEncode, AtZero) {
    const auto v = frequency_encode(0.0, 4);
    const std::vector<double> expect{0, 1, 0, 1, 0, 1, 0, 1};
    ASSERT_EQ(v.size(), expect.size());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], expect[i], 1e-15);
}

TEST(FrequencyEncode, AtHalf) {
    const auto v = frequency_encode(0.5, 2);
    const std::vector<double> expect{1, 0, 0, -1};
    ASSERT_EQ(v.size(), 4u);
    EXPECT_NEAR(v[0], 1.0, 1e-15);
    EXPECT_NEAR(v[1], 0.0, 1e-15);
    EXPECT_NEAR(v[2], 0.0, 1e-15);
    EXPECT_NEAR(v[3], -1.0, 1e-15);
}

TEST(FrequencyEncode, ZeroLevelsIsEmpty) {
    EXPECT_TRUE(frequency_encode(0.3, 0).empty());
    EXPECT_THROW(frequency_encode(0.3, -1), InvalidArgument);
}

TEST(FrequencyEncode, PeriodicAndBounded) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double p = u(rng);
        const auto a = frequency_encode(p, 6);
        const auto b = frequency_encode(p + 2.0, 6);
        for (std::size_t k = 0; k < a.size(); ++k) {
            EXPECT_NEAR(a[k], b[k], 1e-9);
            EXPECT_LE(std::abs(a[k]), 1.0);
        }
    }
}

TEST(MlpArch, InputDimension) {
    MlpArch a{32, 4, 4, 2};
    EXPECT_EQ(a.input_dim(), 6 * 4 + 6 * 2 + 6);
    a.levels_pos = a.levels_dir = 0;
    EXPECT_EQ(a.input_dim(), 6);
    MlpParams p(a);
    EXPECT_EQ(p.weights.front().cols(), 6);
    EXPECT_EQ(p.weights.back().rows(), 4);
}

TEST(MlpForward, ZeroParams) {
    const MlpParams p(MlpArch{16, 3, 3, 1});
    const FieldSample s = mlp_forward(p, Vec3(0.3, 0.1, 0.9), Vec3(0, 0, 1));
    EXPECT_NEAR(s.sigma, std::log(2.0), 1e-6);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s.rgb[c], 0.5, 1e-7);
}

TEST(MlpForward, DeadNeuronPaddingKeepsOutput) {
    const MlpArch small{8, 3, 2, 1};
    const auto p = init_mlp<double>(small, 11);
    MlpArch wide = small;
    wide.width = 16;
    MlpParamsT<double> q(wide);
    for (int l = 0; l < small.layer_count(); ++l) {
        q.weights[l].topLeftCorner(p.weights[l].rows(), p.weights[l].cols()) = p.weights[l];
        q.biases[l].head(p.biases[l].size()) = p.biases[l];
    }
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const Vec3 x = random_unit_point(rng), d = random_unit_vector(rng);
        const FieldSample a = mlp_forward(p, x, d), b = mlp_forward(q, x, d);
        EXPECT_NEAR(a.sigma, b.sigma, 1e-12);
        EXPECT_NEAR((a.rgb - b.rgb).norm(), 0.0, 1e-12);
    }
}

TEST(MlpForward, DeterministicAndInRange) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        MlpArch a{4 + trial, 1 + trial % 4, trial % 5, trial % 3};
        auto p = init_mlp<float>(a, trial);
        std::normal_distribution<double> n(0.0, 3.0);
        p.for_each([&](float& v) { v = static_cast<float>(v * 4 + n(rng)); });
        const Vec3 x = random_unit_point(rng), d = random_unit_vector(rng);
        const FieldSample s1 = mlp_forward(p, x, d), s2 = mlp_forward(p, x, d);
        EXPECT_EQ(s1.sigma, s2.sigma);
        EXPECT_EQ(s1.rgb, s2.rgb);
        EXPECT_GE(s1.sigma, 0.0);
        EXPECT_TRUE((s1.rgb.array() >= 0).all() && (s1.rgb.array() <= 1).all());
    }
}

TEST(MlpParams, RejectsNonFinite) {
    MlpParams p(MlpArch{4, 1, 0, 0});
    auto flat = p.flatten();
    flat[3] = std::nanf("");
    EXPECT_THROW(MlpParams::unflatten(p.arch, flat), InvalidArgument);
    flat.pop_back();
    EXPECT_THROW(MlpParams::unflatten(p.arch, flat), InvalidArgument);
}

namespace {
AnalyticScene one_blob(double view_dependence = 0.0) {
    Blob b;
    b.center = Vec3(0.4, 0.5, 0.6);
    b.stddev = 0.1;
    b.amplitude = 12.0;
    b.color = Vec3(0.9, 0.4, 0.2);
    b.view_dependence = view_dependence;
    return AnalyticScene(Aabb::unit(), {b});
}
}  // namespace

TEST(AnalyticField, PeakAndOneSigma) {
    const AnalyticScene s = one_blob();
    EXPECT_DOUBLE_EQ(s.eval(Vec3(0.4, 0.5, 0.6), Vec3::UnitX()).sigma, 12.0);
    EXPECT_NEAR(s.eval(Vec3(0.5, 0.5, 0.6), Vec3::UnitX()).sigma, 12.0 * std::exp(-0.5), 1e-12);
}

TEST(AnalyticField, OutsideDomainIsEmpty) {
    const FieldSample f = one_blob().eval(Vec3(1.2, 0.5, 0.5), Vec3::UnitX());
    EXPECT_EQ(f.sigma, 0.0);
    EXPECT_EQ(f.rgb, Vec3::Zero());
}

TEST(AnalyticField, NoViewDependence) {
    const AnalyticScene s = one_blob(0.0);
    std::mt19937_64 rng(1);
    const Vec3 x(0.45, 0.5, 0.55);
    const Vec3 ref = s.eval(x, Vec3::UnitZ()).rgb;
    for (int i = 0; i < 100; ++i) EXPECT_EQ(s.eval(x, random_unit_vector(rng)).rgb, ref);
}

TEST(AnalyticField, ViewDependenceModulates) {
    const AnalyticScene s = one_blob(0.5);
    const Vec3 x(0.4, 0.5, 0.6);
    const Vec3 facing = s.eval(x, Vec3::UnitY()).rgb;
    const Vec3 away = s.eval(x, -Vec3::UnitY()).rgb;
    EXPECT_NEAR((facing - Vec3(0.9, 0.4, 0.2)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((away - 0.5 * Vec3(0.9, 0.4, 0.2)).norm(), 0.0, 1e-12);
}

TEST(AnalyticField, LipschitzByFiniteDifferences) {
    Blob a, b;
    a.center = Vec3(0.3, 0.3, 0.3);
    a.stddev = 0.05;
    a.amplitude = 20;
    b.center = Vec3(0.7, 0.6, 0.5);
    b.stddev = 0.2;
    b.amplitude = 4;
    const AnalyticScene s(Aabb::unit(), {a, b});
    const double lip = s.lipschitz_bound();
    std::mt19937_64 rng(2);
    for (int i = 0; i < 2000; ++i) {
        const Vec3 x = 0.05 * Vec3::Ones() + 0.9 * random_unit_point(rng);
        const Vec3 eps = 1e-4 * random_unit_vector(rng);
        const double diff = std::abs(s.eval(x, Vec3::UnitX()).sigma - s.eval(x + eps, Vec3::UnitX()).sigma);
        EXPECT_LE(diff, lip * eps.norm() * (1 + 1e-9));
    }
}

TEST(AnalyticField, ValidatesBlobs) {
    Blob bad;
    bad.stddev = 0;
    EXPECT_THROW(AnalyticScene(Aabb::unit(), {bad}), InvalidArgument);
    Blob outside;
    outside.center = Vec3(2, 0, 0);
    EXPECT_THROW(AnalyticScene(Aabb::unit(), {outside}), InvalidArgument);
}
