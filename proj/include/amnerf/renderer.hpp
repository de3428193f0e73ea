#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "amnerf/common.hpp"
#include "amnerf/field.hpp"
#include "amnerf/geometry.hpp"
#include "amnerf/scheduler.hpp"
#include "amnerf/training.hpp"

namespace amnerf {

/// Row-major linear RGB, channels clamped to [0,1] on write.
class ImageBuffer {
public:
    ImageBuffer() = default;
    ImageBuffer(int width, int height) : width_(width), height_(height) {
        if (width <= 0 || height <= 0) throw InvalidArgument("ImageBuffer: dimensions must be positive");
        data_.assign(static_cast<std::size_t>(width) * height * 3, 0.0);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    const std::vector<double>& data() const { return data_; }

    void set(std::size_t pixel, const Vec3& rgb) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::isfinite(rgb[c]) ? rgb[c] : 0.0;
            data_[3 * pixel + c] = std::clamp(v, 0.0, 1.0);
        }
    }
    Vec3 get(std::size_t pixel) const { return {data_[3 * pixel], data_[3 * pixel + 1], data_[3 * pixel + 2]}; }

    friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

inline ImageBuffer to_image(const Camera& cam, const std::vector<Vec3>& colors) {
    ImageBuffer img(cam.width, cam.height);
    for (std::size_t i = 0; i < colors.size(); ++i) img.set(i, colors[i]);
    return img;
}

template <typename EvaluatorFactory>
    requires std::invocable<EvaluatorFactory&>
ImageBuffer render_image(const KdTree& tree, const Camera& cam, const RenderOptions& opt,
                         EvaluatorFactory&& make_evaluator, RenderStats* stats = nullptr) {
    const std::vector<Ray> rays = generate_camera_rays(cam);
    return to_image(cam, render_rays(tree, rays, opt, make_evaluator, stats));
}

inline ImageBuffer render_image(const KdTree& tree, const Camera& cam, const RenderOptions& opt,
                                RenderStats* stats = nullptr) {
    return render_image(tree, cam, opt, MlpEvaluatorFactory{&tree}, stats);
}

/// Ground truth: `steps` evenly spaced samples over each ray's span through
/// `box`, composited exactly like the tree renders.
template <RadianceField Field>
ImageBuffer render_reference(const Field& field, const Aabb& box, const Camera& cam, int steps,
                             const Vec3& background = Vec3::Zero(), unsigned workers = 1,
                             double stop_transmittance = kDefaultStopTransmittance) {
    if (steps < 16) throw InvalidArgument("render_reference: stepsPerRay must be >= 16");
    const std::vector<Ray> rays = generate_camera_rays(cam);
    ImageBuffer img(cam.width, cam.height);
    parallel_for(rays.size(), workers, [&](std::size_t r) {
        const Ray& ray = rays[r];
        const auto span = ray_aabb_intersect(ray, box);
        if (!span || !(span->t_exit > span->t_enter)) {
            img.set(r, background);
            return;
        }
        const double dt = (span->t_exit - span->t_enter) / steps;
        std::vector<double> ts(steps);
        std::vector<FieldSample> fs(steps);
        for (int i = 0; i < steps; ++i) {
            ts[i] = span->t_enter + i * dt;
            fs[i] = field.eval(ray.at(ts[i]), ray.direction);
        }
        img.set(r, composite_ray(ts, fs, span->t_exit, background, stop_transmittance).rgb);
    });
    return img;
}

/// -10 log10(MSE) over all channels with peak 1; 99 dB for MSE < 1e-10.
inline double image_psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw InvalidArgument("image_psnr: image dimensions differ");
    double sum = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    return psnr_from_mse(sum / static_cast<double>(a.data().size()));
}

/// Binary PPM: "P6\n{w} {h}\n255\n" then RGB bytes, round(clamp(c) * 255).
inline std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img) {
    const std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + img.data().size());
    for (double c : img.data())
        out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)));
    return out;
}

inline void write_ppm(const ImageBuffer& img, const std::string& path) {
    const auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + path);
}

/// Reads the exact layout written by encode_ppm.
inline ImageBuffer decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::string s(bytes.begin(), bytes.end());
    int w = 0, h = 0, maxv = 0, consumed = 0;
    if (std::sscanf(s.c_str(), "P6\n%d %d\n%d%n", &w, &h, &maxv, &consumed) != 3 || maxv != 255 || w <= 0 || h <= 0)
        throw FormatError("ppm: bad header");
    // Exactly one byte separates the header from the payload.
    if (static_cast<std::size_t>(consumed) >= s.size() || s[consumed] != '\n') throw FormatError("ppm: bad header");
    ++consumed;
    const std::size_t n = static_cast<std::size_t>(w) * h * 3;
    if (bytes.size() != static_cast<std::size_t>(consumed) + n) throw FormatError("ppm: wrong payload size");
    ImageBuffer img(w, h);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        const auto* px = bytes.data() + consumed + 3 * p;
        img.set(p, Vec3(px[0], px[1], px[2]) / 255.0);
    }
    return img;
}

}  // namespace amnerf
