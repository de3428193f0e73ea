#pragma once

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "amnerf/common.hpp"
#include "amnerf/field.hpp"
#include "amnerf/geometry.hpp"
#include "amnerf/renderer.hpp"
#include "amnerf/sampling.hpp"
#include "amnerf/subdivision.hpp"

namespace amnerf {

/// Everything a scene file describes: the analytic teacher, cameras and the
/// build / sampling / render parameters.
struct SceneConfig {
    AnalyticScene scene;
    std::vector<Camera> cameras;
    BuildConfig build;
    SamplingConfig sampling;
    double hcheck_factor = 1.0;
    Vec3 background = Vec3::Zero();
    int reference_steps = 1024;
    double stop_transmittance = 1e-4;

    const Aabb& domain() const { return scene.domain(); }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw FormatError("scene config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw FormatError("scene config: unknown key '" + key + "' in '" + where + "'");
    }
}

inline Vec3 read_vec3(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw FormatError("scene config: '" + where + "' must be a 3-element array");
    Vec3 v;
    for (int k = 0; k < 3; ++k) {
        if (!j[k].is_number()) throw FormatError("scene config: '" + where + "' must contain numbers");
        v[k] = j[k].get<double>();
    }
    return v;
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw FormatError("scene config: '" + where + "." + key + "' must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw FormatError("scene config: '" + where + "." + key + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw FormatError("scene config: '" + where + "." + key + "' must be a number");
    } else {
        if (!v.is_string()) throw FormatError("scene config: '" + where + "." + key + "' must be a string");
    }
    out = v.get<T>();
}

inline Blob read_blob(const json& j, const std::string& where) {
    reject_unknown(j, where, {"center", "stddev", "amplitude", "color", "view_dependence", "view_axis"});
    Blob b;
    if (!j.contains("center") || !j.contains("stddev") || !j.contains("amplitude"))
        throw FormatError("scene config: '" + where + "' needs center, stddev and amplitude");
    b.center = read_vec3(j.at("center"), where + ".center");
    read_opt(j, "stddev", b.stddev, where);
    read_opt(j, "amplitude", b.amplitude, where);
    if (j.contains("color")) b.color = read_vec3(j.at("color"), where + ".color");
    read_opt(j, "view_dependence", b.view_dependence, where);
    if (j.contains("view_axis")) b.view_axis = read_vec3(j.at("view_axis"), where + ".view_axis");
    return b;
}

inline Camera read_camera(const json& j, const std::string& where) {
    reject_unknown(j, where, {"position", "target", "up", "fov_y_deg", "width", "height"});
    if (!j.contains("position") || !j.contains("target"))
        throw FormatError("scene config: '" + where + "' needs position and target");
    Vec3 up = Vec3::UnitY();
    if (j.contains("up")) up = read_vec3(j.at("up"), where + ".up");
    double fov_deg = 40.0;
    int width = 128, height = 128;
    read_opt(j, "fov_y_deg", fov_deg, where);
    read_opt(j, "width", width, where);
    read_opt(j, "height", height, where);
    return Camera::look_at(read_vec3(j.at("position"), where + ".position"), read_vec3(j.at("target"), where + ".target"),
                           up, fov_deg * std::numbers::pi / 180.0, width, height);
}

}  // namespace detail

inline SceneConfig parse_scene_config(const nlohmann::json& j) {
    using detail::read_opt;
    SceneConfig cfg;
    try {
        detail::reject_unknown(j, "<root>", {"domain", "blobs", "cameras", "build", "sampling", "render"});
        if (!j.contains("domain") || !j.contains("blobs")) throw FormatError("scene config: 'domain' and 'blobs' are required");

        const auto& dom = j.at("domain");
        detail::reject_unknown(dom, "domain", {"min", "max"});
        if (!dom.contains("min") || !dom.contains("max")) throw FormatError("scene config: domain needs min and max");
        const Aabb domain(detail::read_vec3(dom.at("min"), "domain.min"), detail::read_vec3(dom.at("max"), "domain.max"));

        if (!j.at("blobs").is_array()) throw FormatError("scene config: 'blobs' must be an array");
        std::vector<Blob> blobs;
        for (std::size_t i = 0; i < j.at("blobs").size(); ++i)
            blobs.push_back(detail::read_blob(j.at("blobs")[i], "blobs[" + std::to_string(i) + "]"));
        cfg.scene = AnalyticScene(domain, std::move(blobs));

        if (j.contains("cameras")) {
            if (!j.at("cameras").is_array()) throw FormatError("scene config: 'cameras' must be an array");
            for (std::size_t i = 0; i < j.at("cameras").size(); ++i)
                cfg.cameras.push_back(detail::read_camera(j.at("cameras")[i], "cameras[" + std::to_string(i) + "]"));
        }

        if (j.contains("build")) {
            const auto& b = j.at("build");
            detail::reject_unknown(b, "build",
                                   {"cloud_points", "cloud_dirs", "max_depth", "min_points", "min_mass", "leaf_threshold",
                                    "score_points", "score_dirs", "seed", "arch", "distill"});
            BuildConfig& bc = cfg.build;
            read_opt(b, "cloud_points", bc.cloud_points, "build");
            read_opt(b, "cloud_dirs", bc.cloud_dirs, "build");
            read_opt(b, "max_depth", bc.max_depth, "build");
            read_opt(b, "min_points", bc.min_points, "build");
            read_opt(b, "min_mass", bc.min_mass, "build");
            read_opt(b, "leaf_threshold", bc.leaf_threshold, "build");
            read_opt(b, "score_points", bc.score_points, "build");
            read_opt(b, "score_dirs", bc.score_dirs, "build");
            read_opt(b, "seed", bc.seed, "build");
            if (b.contains("arch")) {
                const auto& a = b.at("arch");
                detail::reject_unknown(a, "build.arch", {"width", "depth", "levels_pos", "levels_dir"});
                read_opt(a, "width", bc.arch.width, "build.arch");
                read_opt(a, "depth", bc.arch.depth, "build.arch");
                read_opt(a, "levels_pos", bc.arch.levels_pos, "build.arch");
                read_opt(a, "levels_dir", bc.arch.levels_dir, "build.arch");
            }
            if (b.contains("distill")) {
                const auto& d = b.at("distill");
                detail::reject_unknown(d, "build.distill", {"iterations", "batch_size", "dirs_per_point", "lr"});
                read_opt(d, "iterations", bc.distill.iterations, "build.distill");
                read_opt(d, "batch_size", bc.distill.batch_size, "build.distill");
                read_opt(d, "dirs_per_point", bc.distill.dirs_per_point, "build.distill");
                read_opt(d, "lr", bc.distill.lr, "build.distill");
            }
        }
        cfg.build.distill.seed = cfg.build.seed;
        cfg.build.validate();

        if (j.contains("sampling")) {
            const auto& s = j.at("sampling");
            detail::reject_unknown(s, "sampling", {"budget", "max_per_ray", "mode", "hcheck_factor", "seed"});
            read_opt(s, "budget", cfg.sampling.budget, "sampling");
            read_opt(s, "max_per_ray", cfg.sampling.max_per_ray, "sampling");
            read_opt(s, "hcheck_factor", cfg.hcheck_factor, "sampling");
            read_opt(s, "seed", cfg.sampling.seed, "sampling");
            std::string mode = "stratified";
            read_opt(s, "mode", mode, "sampling");
            if (mode == "stratified")
                cfg.sampling.mode = SampleMode::Stratified;
            else if (mode == "halton")
                cfg.sampling.mode = SampleMode::Halton;
            else if (mode == "uniform")
                cfg.sampling.mode = SampleMode::Uniform;
            else
                throw FormatError("scene config: sampling.mode must be 'stratified', 'halton' or 'uniform'");
        }
        cfg.sampling.validate();
        if (!(cfg.hcheck_factor > 0)) throw FormatError("scene config: sampling.hcheck_factor must be positive");

        if (j.contains("render")) {
            const auto& r = j.at("render");
            detail::reject_unknown(r, "render", {"background", "reference_steps", "stop_transmittance"});
            if (r.contains("background")) cfg.background = detail::read_vec3(r.at("background"), "render.background");
            read_opt(r, "reference_steps", cfg.reference_steps, "render");
            read_opt(r, "stop_transmittance", cfg.stop_transmittance, "render");
            if (cfg.reference_steps < 16) throw FormatError("scene config: render.reference_steps must be >= 16");
            if (!(cfg.stop_transmittance >= 0 && cfg.stop_transmittance < 1))
                throw FormatError("scene config: render.stop_transmittance must be in [0, 1)");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("scene config: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("scene config: ") + e.what());
    }
    return cfg;
}

inline SceneConfig load_scene_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open scene config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("scene config " + path + ": " + e.what());
    }
    return parse_scene_config(j);
}

/// Render options for `cam` from the scene's sampling and render sections.
inline RenderOptions render_options(const SceneConfig& cfg, const Camera& cam, bool hierarchical, RenderPath path,
                                    unsigned workers) {
    RenderOptions opt;
    opt.hcheck = hierarchical ? HCheckParams::from_camera(cam, cfg.hcheck_factor) : HCheckParams::leaf_only();
    opt.sampling = cfg.sampling;
    opt.background = cfg.background;
    opt.stop_transmittance = cfg.stop_transmittance;
    opt.path = path;
    opt.workers = workers;
    return opt;
}

}  // namespace amnerf
