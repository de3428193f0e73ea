#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "amnerf/common.hpp"

namespace amnerf {

using Vec3 = Eigen::Vector3d;

/// Closed axis-aligned box with strictly positive extent on every axis.
struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Ones();

    Aabb() = default;
    Aabb(const Vec3& lo, const Vec3& hi) : min(lo), max(hi) {
        for (int k = 0; k < 3; ++k) {
            if (!(lo[k] < hi[k]) || !std::isfinite(lo[k]) || !std::isfinite(hi[k]))
                throw InvalidArgument("Aabb: min must be strictly less than max on every axis");
        }
    }

    static Aabb unit() { return Aabb(Vec3::Zero(), Vec3::Ones()); }

    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
    double diagonal() const { return extent().norm(); }
    double volume() const { return extent().prod(); }
    int longest_axis() const {
        Vec3 e = extent();
        int axis = 0;
        for (int k = 1; k < 3; ++k)
            if (e[k] > e[axis]) axis = k;
        return axis;
    }

    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }

    friend bool operator==(const Aabb& a, const Aabb& b) { return a.min == b.min && a.max == b.max; }
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
    std::uint32_t ray_id = 0;

    Vec3 at(double t) const { return origin + t * direction; }
};

struct Span {
    double t_enter;
    double t_exit;
};

/// Slab test restricted to the forward half-line (t >= 0). A direction
/// component of exactly zero turns into an infinite slab; the origin then has
/// to lie inside that slab for a hit.
inline std::optional<Span> ray_aabb_intersect(const Ray& ray, const Aabb& box) {
    double t_near = 0.0;
    double t_far = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        const double o = ray.origin[k];
        const double d = ray.direction[k];
        if (d == 0.0) {
            if (o < box.min[k] || o > box.max[k]) return std::nullopt;
            continue;
        }
        const double inv = 1.0 / d;
        double t0 = (box.min[k] - o) * inv;
        double t1 = (box.max[k] - o) * inv;
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
    }
    if (t_far < t_near) return std::nullopt;
    return Span{t_near, t_far};
}

/// Splits `box` at the plane `axis = position`. The position must lie strictly
/// inside the box. Points on the plane belong to the right (upper) child.
inline std::pair<Aabb, Aabb> aabb_split(const Aabb& box, int axis, double position) {
    if (axis < 0 || axis > 2) throw InvalidArgument("aabb_split: axis must be 0, 1 or 2");
    if (!(box.min[axis] < position && position < box.max[axis]))
        throw InvalidArgument("aabb_split: split position must lie strictly inside the box");
    Vec3 left_max = box.max;
    Vec3 right_min = box.min;
    left_max[axis] = position;
    right_min[axis] = position;
    return {Aabb(box.min, left_max), Aabb(right_min, box.max)};
}

/// Which side of a split a point falls on (right-closed convention).
inline bool goes_right(const Vec3& p, int axis, double position) { return p[axis] >= position; }

/// Pinhole camera with an orthonormal basis.
struct Camera {
    Vec3 position = Vec3::Zero();
    Vec3 forward = -Vec3::UnitZ();
    Vec3 up = Vec3::UnitY();
    Vec3 right = Vec3::UnitX();
    double fov_y = std::numbers::pi / 4;
    int width = 1;
    int height = 1;

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint, double fov_y,
                          int width, int height) {
        Camera cam;
        cam.position = eye;
        cam.forward = (target - eye).normalized();
        cam.right = cam.forward.cross(up_hint).normalized();
        cam.up = cam.right.cross(cam.forward).normalized();
        cam.fov_y = fov_y;
        cam.width = width;
        cam.height = height;
        cam.validate();
        return cam;
    }

    void validate() const {
        if (width <= 0 || height <= 0) throw InvalidArgument("Camera: width and height must be positive");
        if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw InvalidArgument("Camera: fov_y must be in (0, pi)");
        constexpr double tol = 1e-6;
        const bool unit = std::abs(forward.norm() - 1) < tol && std::abs(up.norm() - 1) < tol &&
                          std::abs(right.norm() - 1) < tol;
        const bool ortho = std::abs(forward.dot(up)) < tol && std::abs(forward.dot(right)) < tol &&
                           std::abs(up.dot(right)) < tol;
        if (!unit || !ortho) throw InvalidArgument("Camera: basis must be orthonormal");
    }

    /// World-space footprint of one pixel per unit distance along a ray.
    double pixel_footprint_slope() const { return std::tan(fov_y / height); }
};

/// One ray per pixel center, row-major, ray_id = y * width + x.
inline std::vector<Ray> generate_camera_rays(const Camera& cam) {
    cam.validate();
    const double tan_half = std::tan(0.5 * cam.fov_y);
    const double aspect = static_cast<double>(cam.width) / cam.height;
    std::vector<Ray> rays;
    rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const double u = (2.0 * (x + 0.5) / cam.width - 1.0) * tan_half * aspect;
            const double v = (1.0 - 2.0 * (y + 0.5) / cam.height) * tan_half;
            Ray r;
            r.origin = cam.position;
            r.direction = (cam.forward + u * cam.right + v * cam.up).normalized();
            r.ray_id = static_cast<std::uint32_t>(y * cam.width + x);
            rays.push_back(r);
        }
    }
    return rays;
}

}  // namespace amnerf
