#pragma once

#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "amnerf/common.hpp"
#include "amnerf/geometry.hpp"

namespace amnerf {

/// Density and emitted color at one (position, direction) query.
struct FieldSample {
    double sigma = 0.0;
    Vec3 rgb = Vec3::Zero();
};

/// Anything that maps (position, direction) to a FieldSample.
template <typename F>
concept RadianceField = requires(const F& f, const Vec3& x, const Vec3& d) {
    { f.eval(x, d) } -> std::convertible_to<FieldSample>;
};

// ---------------------------------------------------------------------------
// Analytic teacher: a sum of isotropic Gaussian density blobs.

struct Blob {
    Vec3 center = Vec3::Constant(0.5);
    double stddev = 0.1;
    double amplitude = 10.0;
    Vec3 color = Vec3::Ones();
    double view_dependence = 0.0;
    Vec3 view_axis = Vec3::UnitY();
};

class AnalyticScene {
public:
    AnalyticScene() = default;
    AnalyticScene(Aabb domain, std::vector<Blob> blobs) : domain_(domain), blobs_(std::move(blobs)) {
        for (Blob& b : blobs_) {
            if (!(b.stddev > 0) || !(b.amplitude > 0))
                throw InvalidArgument("AnalyticScene: blob stddev and amplitude must be positive");
            if (!domain_.contains(b.center))
                throw InvalidArgument("AnalyticScene: blob center must lie inside the domain");
            if (!(b.view_dependence >= 0 && b.view_dependence <= 1))
                throw InvalidArgument("AnalyticScene: view dependence must be in [0, 1]");
            if ((b.color.array() < 0).any() || (b.color.array() > 1).any())
                throw InvalidArgument("AnalyticScene: blob color must be in [0, 1]");
            if (!(b.view_axis.norm() > 0)) throw InvalidArgument("AnalyticScene: view axis must be nonzero");
            b.view_axis.normalize();
        }
    }

    const Aabb& domain() const { return domain_; }
    const std::vector<Blob>& blobs() const { return blobs_; }

    FieldSample eval(const Vec3& x, const Vec3& d) const {
        FieldSample out;
        if (!domain_.contains(x)) return out;
        Vec3 weighted = Vec3::Zero();
        for (const Blob& b : blobs_) {
            const double r2 = (x - b.center).squaredNorm();
            const double s = b.amplitude * std::exp(-r2 / (2.0 * b.stddev * b.stddev));
            const double mod = 1.0 - b.view_dependence + b.view_dependence * std::max(0.0, d.dot(b.view_axis));
            out.sigma += s;
            weighted += s * mod * b.color;
        }
        if (out.sigma > 0) out.rgb = weighted / out.sigma;
        return out;
    }

    /// Upper bound on |grad sigma|.
    double lipschitz_bound() const {
        double lip = 0;
        for (const Blob& b : blobs_) lip += b.amplitude / (b.stddev * std::exp(0.5));
        return lip;
    }

private:
    Aabb domain_ = Aabb::unit();
    std::vector<Blob> blobs_;
};

// ---------------------------------------------------------------------------
// Small MLP field.

/// (sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p))
template <typename Scalar = double>
void frequency_encode_into(Scalar p, int levels, Scalar* out) {
    Scalar freq = std::numbers::pi_v<Scalar>;
    for (int i = 0; i < levels; ++i) {
        out[2 * i] = std::sin(freq * p);
        out[2 * i + 1] = std::cos(freq * p);
        freq *= Scalar(2);
    }
}

inline std::vector<double> frequency_encode(double p, int levels) {
    if (levels < 0) throw InvalidArgument("frequency_encode: levels must be non-negative");
    std::vector<double> out(2 * static_cast<std::size_t>(levels));
    frequency_encode_into(p, levels, out.data());
    return out;
}

struct MlpArch {
    int width = 32;
    int depth = 4;       // hidden layers
    int levels_pos = 4;  // frequency levels for position
    int levels_dir = 2;  // frequency levels for direction

    static constexpr int kOutputs = 4;  // sigma logit + rgb logits

    int input_dim() const { return 6 * levels_pos + 6 * levels_dir + 6; }
    int layer_count() const { return depth + 1; }
    int layer_in(int l) const { return l == 0 ? input_dim() : width; }
    int layer_out(int l) const { return l == depth ? kOutputs : width; }
    std::size_t param_count() const {
        std::size_t n = 0;
        for (int l = 0; l < layer_count(); ++l)
            n += static_cast<std::size_t>(layer_out(l)) * (layer_in(l) + 1);
        return n;
    }
    void validate() const {
        if (width < 1 || depth < 1 || levels_pos < 0 || levels_dir < 0)
            throw InvalidArgument("MlpArch: width, depth >= 1 and encoding levels >= 0 required");
        if (levels_pos > 16 || levels_dir > 16 || width > 4096 || depth > 64)
            throw InvalidArgument("MlpArch: architecture out of supported range");
    }
    friend bool operator==(const MlpArch&, const MlpArch&) = default;
};

/// Builds the network input from a node-normalized position in [0,1]^3 and a
/// unit direction. Positions are remapped to [-1,1] before encoding; raw
/// coordinates are appended after the encoded features.
template <typename Scalar>
void encode_input(const MlpArch& arch, const Vec3& x_unit, const Vec3& d, Scalar* out) {
    Scalar* o = out;
    Scalar p[3];
    for (int k = 0; k < 3; ++k) p[k] = static_cast<Scalar>(2.0 * x_unit[k] - 1.0);
    for (int k = 0; k < 3; ++k, o += 2 * arch.levels_pos) frequency_encode_into(p[k], arch.levels_pos, o);
    for (int k = 0; k < 3; ++k, o += 2 * arch.levels_dir)
        frequency_encode_into(static_cast<Scalar>(d[k]), arch.levels_dir, o);
    for (int k = 0; k < 3; ++k) *o++ = p[k];
    for (int k = 0; k < 3; ++k) *o++ = static_cast<Scalar>(d[k]);
}

template <typename Scalar>
Scalar softplus(Scalar z) {
    return std::max(z, Scalar(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
    return Scalar(1) / (Scalar(1) + std::exp(-z));
}

/// Weights and biases of a fully connected ReLU network. Layer l maps
/// layer_in(l) -> layer_out(l); the last layer is linear with 4 outputs.
template <typename Scalar>
struct MlpParamsT {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    MlpArch arch;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    MlpParamsT() = default;

    /// All-zero parameters for `arch`.
    explicit MlpParamsT(const MlpArch& a) : arch(a) {
        arch.validate();
        for (int l = 0; l < arch.layer_count(); ++l) {
            weights.push_back(Matrix::Zero(arch.layer_out(l), arch.layer_in(l)));
            biases.push_back(Vector::Zero(arch.layer_out(l)));
        }
    }

    /// Checks layer shapes and finiteness; call after filling parameters from
    /// an external source.
    void validate() const {
        arch.validate();
        if (weights.size() != static_cast<std::size_t>(arch.layer_count()) || biases.size() != weights.size())
            throw InvalidArgument("MlpParams: layer count does not match architecture");
        for (int l = 0; l < arch.layer_count(); ++l) {
            if (weights[l].rows() != arch.layer_out(l) || weights[l].cols() != arch.layer_in(l) ||
                biases[l].size() != arch.layer_out(l))
                throw InvalidArgument("MlpParams: layer shapes do not chain");
            if (!weights[l].allFinite() || !biases[l].allFinite())
                throw InvalidArgument("MlpParams: non-finite parameter");
        }
    }

    std::size_t size() const { return arch.param_count(); }

    /// Visits every scalar parameter in a fixed order (per layer: weights
    /// row-major, then biases).
    template <typename Fn>
    void for_each(Fn&& fn) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (Eigen::Index i = 0; i < weights[l].size(); ++i) fn(weights[l].data()[i]);
            for (Eigen::Index i = 0; i < biases[l].size(); ++i) fn(biases[l][i]);
        }
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (Eigen::Index i = 0; i < weights[l].size(); ++i) fn(weights[l].data()[i]);
            for (Eigen::Index i = 0; i < biases[l].size(); ++i) fn(biases[l][i]);
        }
    }

    std::vector<Scalar> flatten() const {
        std::vector<Scalar> out;
        out.reserve(size());
        for_each([&](Scalar v) { out.push_back(v); });
        return out;
    }

    static MlpParamsT unflatten(const MlpArch& arch, const std::vector<Scalar>& flat) {
        MlpParamsT p(arch);
        if (flat.size() != p.size()) throw InvalidArgument("MlpParams: parameter blob has wrong length");
        std::size_t i = 0;
        p.for_each([&](Scalar& v) { v = flat[i++]; });
        p.validate();
        return p;
    }

    template <typename Other>
    MlpParamsT<Other> cast() const {
        MlpParamsT<Other> out;
        out.arch = arch;
        for (const auto& w : weights) out.weights.push_back(w.template cast<Other>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<Other>());
        return out;
    }

    friend bool operator==(const MlpParamsT& a, const MlpParamsT& b) {
        if (!(a.arch == b.arch) || a.weights.size() != b.weights.size()) return false;
        for (std::size_t l = 0; l < a.weights.size(); ++l)
            if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
        return true;
    }
};

using MlpParams = MlpParamsT<float>;

/// Scratch buffers for single-sample inference; reuse one per worker.
template <typename Scalar>
struct MlpWorkspace {
    typename MlpParamsT<Scalar>::Vector input, a, b;
};

/// Raw network outputs (sigma logit, rgb logits) for an encoded input.
template <typename Scalar>
Eigen::Matrix<Scalar, 4, 1> mlp_logits(const MlpParamsT<Scalar>& params, const Vec3& x_unit, const Vec3& d,
                                       MlpWorkspace<Scalar>& ws) {
    const MlpArch& arch = params.arch;
    ws.input.resize(arch.input_dim());
    encode_input(arch, x_unit, d, ws.input.data());
    const auto* cur = &ws.input;
    auto* next = &ws.a;
    for (int l = 0; l < arch.depth; ++l) {
        next->noalias() = params.weights[l] * (*cur);
        *next += params.biases[l];
        *next = next->cwiseMax(Scalar(0));
        cur = next;
        next = (next == &ws.a) ? &ws.b : &ws.a;
    }
    Eigen::Matrix<Scalar, 4, 1> out;
    out.noalias() = params.weights[arch.depth] * (*cur);
    out += params.biases[arch.depth];
    return out;
}

template <typename Scalar>
FieldSample logits_to_sample(const Eigen::Matrix<Scalar, 4, 1>& z) {
    FieldSample s;
    s.sigma = static_cast<double>(softplus(z[0]));
    for (int c = 0; c < 3; ++c) s.rgb[c] = static_cast<double>(sigmoid(z[c + 1]));
    return s;
}

/// Evaluates the network at a node-normalized position.
template <typename Scalar>
FieldSample mlp_forward(const MlpParamsT<Scalar>& params, const Vec3& x_unit, const Vec3& d,
                        MlpWorkspace<Scalar>& ws) {
    return logits_to_sample(mlp_logits(params, x_unit, d, ws));
}

template <typename Scalar>
FieldSample mlp_forward(const MlpParamsT<Scalar>& params, const Vec3& x_unit, const Vec3& d) {
    MlpWorkspace<Scalar> ws;
    return mlp_forward(params, x_unit, d, ws);
}

}  // namespace amnerf
