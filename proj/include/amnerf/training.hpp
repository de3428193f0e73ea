#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "amnerf/common.hpp"
#include "amnerf/field.hpp"
#include "amnerf/geometry.hpp"

namespace amnerf {

/// One supervised query: node-normalized position, direction, teacher output.
struct TrainingExample {
    Vec3 x_unit;
    Vec3 dir;
    FieldSample target;
};

template <typename Scalar>
struct Gradient {
    MlpParamsT<Scalar> grads;
    double loss = 0.0;
};

namespace detail {

template <typename Scalar>
struct BatchBuffers {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Mat input;
    std::vector<Mat> pre;   // pre-activations per layer
    std::vector<Mat> post;  // activations per hidden layer
    Mat delta, delta_prev;
};

}  // namespace detail

/// Mean loss mean[(sigma - sigma*)^2 + |rgb - rgb*|^2] over the batch and its
/// gradient with respect to every parameter, by reverse-mode accumulation.
template <typename Scalar>
Gradient<Scalar> mlp_backward(const MlpParamsT<Scalar>& params, const std::vector<TrainingExample>& batch,
                              detail::BatchBuffers<Scalar>& buf) {
    using Mat = typename detail::BatchBuffers<Scalar>::Mat;
    const MlpArch& arch = params.arch;
    if (batch.empty()) throw InvalidArgument("mlp_backward: batch must be nonempty");
    if (params.weights.size() != static_cast<std::size_t>(arch.layer_count()))
        throw InvalidArgument("mlp_backward: parameter shapes do not match architecture");
    const auto n = static_cast<Eigen::Index>(batch.size());
    const int layers = arch.layer_count();

    buf.input.resize(arch.input_dim(), n);
    for (Eigen::Index j = 0; j < n; ++j) encode_input(arch, batch[j].x_unit, batch[j].dir, buf.input.col(j).data());

    buf.pre.resize(layers);
    buf.post.resize(layers);
    const Mat* act = &buf.input;
    for (int l = 0; l < layers; ++l) {
        buf.pre[l].noalias() = params.weights[l] * (*act);
        buf.pre[l].colwise() += params.biases[l];
        if (l < arch.depth) {
            buf.post[l] = buf.pre[l].cwiseMax(Scalar(0));
            act = &buf.post[l];
        }
    }

    const Mat& z = buf.pre[layers - 1];
    buf.delta.resize(MlpArch::kOutputs, n);
    double loss = 0.0;
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const FieldSample& t = batch[j].target;
        const Scalar sigma = softplus(z(0, j));
        const Scalar r0 = sigma - static_cast<Scalar>(t.sigma);
        loss += static_cast<double>(r0 * r0);
        buf.delta(0, j) = Scalar(2) * r0 * sigmoid(z(0, j)) * inv_n;
        for (int c = 0; c < 3; ++c) {
            const Scalar s = sigmoid(z(c + 1, j));
            const Scalar r = s - static_cast<Scalar>(t.rgb[c]);
            loss += static_cast<double>(r * r);
            buf.delta(c + 1, j) = Scalar(2) * r * s * (Scalar(1) - s) * inv_n;
        }
    }

    Gradient<Scalar> out;
    out.loss = loss / static_cast<double>(n);
    out.grads = MlpParamsT<Scalar>(arch);
    for (int l = layers - 1; l >= 0; --l) {
        const Mat& prev = (l == 0) ? buf.input : buf.post[l - 1];
        out.grads.weights[l].noalias() = buf.delta * prev.transpose();
        out.grads.biases[l] = buf.delta.rowwise().sum();
        if (l > 0) {
            buf.delta_prev.noalias() = params.weights[l].transpose() * buf.delta;
            buf.delta_prev = (buf.pre[l - 1].array() > Scalar(0)).select(buf.delta_prev, Scalar(0));
            std::swap(buf.delta, buf.delta_prev);
        }
    }
    return out;
}

template <typename Scalar>
Gradient<Scalar> mlp_backward(const MlpParamsT<Scalar>& params, const std::vector<TrainingExample>& batch) {
    detail::BatchBuffers<Scalar> buf;
    return mlp_backward(params, batch, buf);
}

/// Mean loss only, evaluated sample by sample through mlp_forward.
template <typename Scalar>
double mlp_loss(const MlpParamsT<Scalar>& params, const std::vector<TrainingExample>& batch) {
    MlpWorkspace<Scalar> ws;
    double loss = 0.0;
    for (const TrainingExample& e : batch) {
        const FieldSample s = mlp_forward(params, e.x_unit, e.dir, ws);
        loss += (s.sigma - e.target.sigma) * (s.sigma - e.target.sigma) + (s.rgb - e.target.rgb).squaredNorm();
    }
    return loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
struct AdamState {
    std::uint64_t step = 0;
    MlpParamsT<Scalar> m, v;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(const MlpArch& arch, double learning_rate) : m(arch), v(arch), lr(learning_rate) {}
};

/// Bias-corrected Adam update in place.
template <typename Scalar>
void adam_step(MlpParamsT<Scalar>& params, const MlpParamsT<Scalar>& grads, AdamState<Scalar>& st) {
    if (!(params.arch == grads.arch) || !(params.arch == st.m.arch))
        throw InvalidArgument("adam_step: parameter, gradient and state shapes differ");
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    const Scalar b1 = static_cast<Scalar>(st.beta1), b2 = static_cast<Scalar>(st.beta2);
    const Scalar step_size = static_cast<Scalar>(st.lr / c1);
    const Scalar inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
    const Scalar eps = static_cast<Scalar>(st.eps);
    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
        p.array() -= step_size * m.array() / ((v.array().sqrt() * inv_sqrt_c2) + eps);
    };
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        update(params.weights[l], grads.weights[l], st.m.weights[l], st.v.weights[l]);
        update(params.biases[l], grads.biases[l], st.m.biases[l], st.v.biases[l]);
    }
}

// ---------------------------------------------------------------------------
// Distillation

struct DistillConfig {
    int iterations = 2000;  // N_max
    int batch_size = 1024;
    int dirs_per_point = 1;
    double lr = 5e-3;
    std::uint64_t seed = 1;

    void validate() const {
        if (iterations < 0 || batch_size < 1 || dirs_per_point < 1 || !(lr > 0))
            throw InvalidArgument("DistillConfig: batch size, directions per point and lr must be positive");
    }
};

template <typename Scalar>
struct DistillResult {
    MlpParamsT<Scalar> params;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> loss_history;
};

/// He-uniform weights, zero biases.
template <typename Scalar>
MlpParamsT<Scalar> init_mlp(const MlpArch& arch, std::uint64_t seed) {
    MlpParamsT<Scalar> p(arch);
    std::mt19937_64 rng(mix_seed(seed, 0x1417));
    for (int l = 0; l < arch.layer_count(); ++l) {
        const double bound = std::sqrt(6.0 / arch.layer_in(l));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < p.weights[l].size(); ++i)
            p.weights[l].data()[i] = static_cast<Scalar>(dist(rng));
    }
    return p;
}

inline Vec3 random_unit_vector(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double z = 2.0 * u(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * u(rng);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
}

inline Vec3 random_unit_point(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double a = u(rng), b = u(rng), c = u(rng);
    return {a, b, c};
}

inline Vec3 from_unit(const Aabb& box, const Vec3& u) {
    return box.min + u.cwiseProduct(box.extent());
}

/// Fills `out` with positions uniform in `box` (stored node-normalized),
/// each paired with `dirs` uniform sphere directions, labelled by the teacher.
template <RadianceField Teacher>
void draw_examples(const Teacher& teacher, const Aabb& box, int points, int dirs, std::mt19937_64& rng,
                   std::vector<TrainingExample>& out) {
    out.clear();
    out.reserve(static_cast<std::size_t>(points) * dirs);
    for (int i = 0; i < points; ++i) {
        const Vec3 u = random_unit_point(rng);
        const Vec3 x = from_unit(box, u);
        for (int k = 0; k < dirs; ++k) {
            const Vec3 d = random_unit_vector(rng);
            out.push_back({u, d, teacher.eval(x, d)});
        }
    }
}

/// Trains a fresh student on teacher queries drawn uniformly from `box`.
template <typename Scalar = float, RadianceField Teacher>
DistillResult<Scalar> distill_node(const Teacher& teacher, const Aabb& box, const MlpArch& arch,
                                   const DistillConfig& cfg, bool keep_history = false) {
    cfg.validate();
    DistillResult<Scalar> res;
    res.params = init_mlp<Scalar>(arch, cfg.seed);
    if (cfg.iterations == 0) return res;

    std::mt19937_64 rng(mix_seed(cfg.seed, 0xD157));
    const int points = std::max(1, cfg.batch_size / cfg.dirs_per_point);
    AdamState<Scalar> adam(arch, cfg.lr);
    detail::BatchBuffers<Scalar> buf;
    std::vector<TrainingExample> batch;
    if (keep_history) res.loss_history.reserve(cfg.iterations);
    for (int it = 0; it < cfg.iterations; ++it) {
        draw_examples(teacher, box, points, cfg.dirs_per_point, rng, batch);
        Gradient<Scalar> g = mlp_backward(res.params, batch, buf);
        if (it == 0) res.initial_loss = g.loss;
        res.final_loss = g.loss;
        if (keep_history) res.loss_history.push_back(g.loss);
        adam_step(res.params, g.grads, adam);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Scoring

/// Student MLP bound to its node box, evaluated at world positions.
template <typename Scalar>
struct NodeMlpField {
    const MlpParamsT<Scalar>* params;
    Aabb box;

    FieldSample eval(const Vec3& x, const Vec3& d) const {
        MlpWorkspace<Scalar> ws;
        const Vec3 u = (x - box.min).cwiseQuotient(box.extent());
        return mlp_forward(*params, u, d, ws);
    }
};

inline constexpr double kScoreSigmaCap = 20.0;
inline constexpr double kPsnrCapDb = 99.0;

inline double psnr_from_mse(double mse) {
    if (mse < 1e-10) return kPsnrCapDb;
    return -10.0 * std::log10(mse);
}

struct ScoreQuery {
    Vec3 x;
    Vec3 dir;
};

/// The seeded evaluation set used by node_score: `n_points` positions in
/// `box`, each with `n_dirs` directions.
inline std::vector<ScoreQuery> score_queries(const Aabb& box, int n_points, int n_dirs, std::uint64_t seed) {
    if (n_points < 1 || n_dirs < 1) throw InvalidArgument("node_score: nPoints and nDirs must be >= 1");
    std::mt19937_64 rng(mix_seed(seed, 0x5C0E));
    std::vector<ScoreQuery> out;
    out.reserve(static_cast<std::size_t>(n_points) * n_dirs);
    for (int i = 0; i < n_points; ++i) {
        const Vec3 x = from_unit(box, random_unit_point(rng));
        for (int k = 0; k < n_dirs; ++k) out.push_back({x, random_unit_vector(rng)});
    }
    return out;
}

/// Squared 4-channel residual; density is clamped to [0, 20] and rescaled to
/// [0, 1] so it shares a peak value of 1 with the color channels.
inline double score_residual(const FieldSample& a, const FieldSample& b) {
    auto scaled = [](double s) { return std::clamp(s, 0.0, kScoreSigmaCap) / kScoreSigmaCap; };
    const double ds = scaled(a.sigma) - scaled(b.sigma);
    return ds * ds + (a.rgb - b.rgb).squaredNorm();
}

/// Point-sample PSNR of `student` against `teacher` over score_queries().
template <RadianceField Teacher, RadianceField Student>
double node_score(const Teacher& teacher, const Student& student, const Aabb& box, int n_points, int n_dirs,
                  std::uint64_t seed) {
    const std::vector<ScoreQuery> queries = score_queries(box, n_points, n_dirs, seed);
    double sum = 0.0;
    for (const ScoreQuery& q : queries) sum += score_residual(teacher.eval(q.x, q.dir), student.eval(q.x, q.dir));
    return psnr_from_mse(sum / (4.0 * static_cast<double>(queries.size())));
}

template <RadianceField Teacher, typename Scalar>
double node_score(const Teacher& teacher, const MlpParamsT<Scalar>& student, const Aabb& box, int n_points,
                  int n_dirs, std::uint64_t seed) {
    return node_score(teacher, NodeMlpField<Scalar>{&student, box}, box, n_points, n_dirs, seed);
}

}  // namespace amnerf
