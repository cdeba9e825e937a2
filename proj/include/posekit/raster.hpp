#pragma once

// Pinhole projection and software z-buffer depth rasterization.
//
// Conventions: OpenCV camera frame (x right, y down, z forward), depth is the
// camera-frame z in mm, pixel (i, j) covers [i, i+1) x [j, j+1) and is sampled
// at its center (i + 0.5, j + 0.5). Depth 0 means "no surface".

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "posekit/core.hpp"
#include "posekit/geometry.hpp"

namespace posekit {

struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
            throw PreconditionError("camera focal lengths must be positive");
        if (!std::isfinite(cx) || !std::isfinite(cy))
            throw PreconditionError("camera principal point must be finite");
        if (width < 1 || height < 1) throw PreconditionError("camera image size must be >= 1");
    }

    /// Intrinsics for the same camera resampled to a new image size.
    CameraIntrinsics scaled_to(int new_width, int new_height) const {
        const double sx = static_cast<double>(new_width) / width;
        const double sy = static_cast<double>(new_height) / height;
        return {fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
    }

    bool operator==(const CameraIntrinsics&) const = default;
};

inline constexpr double kNearPlane = 0.1;   // mm
inline constexpr double kMinProjectZ = 1e-9;  // mm

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double z = 0.0;
    bool valid = false;  // false when the point is at or behind the camera
};

inline Projection project_camera_point(const CameraIntrinsics& k, const Vec3& pc) {
    Projection p;
    p.z = pc.z;
    p.valid = pc.z > kMinProjectZ;
    if (p.valid) {
        p.u = k.fx * pc.x / pc.z + k.cx;
        p.v = k.fy * pc.y / pc.z + k.cy;
    }
    return p;
}

inline std::vector<Projection> project(const CameraIntrinsics& k, const Pose& pose,
                                       std::span<const Vec3> points) {
    std::vector<Projection> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        out[i] = project_camera_point(k, pose.apply(points[i]));
    return out;
}

struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<float> values;  // row-major, mm along camera z

    DepthMap() = default;
    DepthMap(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0f) {}

    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    bool same_size(const DepthMap& o) const { return width == o.width && height == o.height; }
    std::size_t covered_pixels() const {
        return static_cast<std::size_t>(
            std::count_if(values.begin(), values.end(), [](float v) { return v > 0.0f; }));
    }
};

namespace raster_detail {

/// Sutherland-Hodgman clip of a triangle against z >= near.
inline int clip_near(const std::array<Vec3, 3>& tri, std::array<Vec3, 4>& out) {
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const Vec3& a = tri[i];
        const Vec3& b = tri[(i + 1) % 3];
        const bool ain = a.z >= kNearPlane;
        const bool bin = b.z >= kNearPlane;
        if (ain) out[n++] = a;
        if (ain != bin) {
            const double t = (kNearPlane - a.z) / (b.z - a.z);
            Vec3 c = a + (b - a) * t;
            c.z = kNearPlane;
            out[n++] = c;
        }
    }
    return n;
}

/// Top-left fill rule for a directed edge (ex, ey) of a triangle with
/// positive signed area in (x right, y down) screen space.
inline bool is_top_left(double ex, double ey) { return (ey == 0.0 && ex > 0.0) || ey < 0.0; }

}  // namespace raster_detail

/// Z-buffer that accumulates any number of meshes into one depth map.
class ZBuffer {
public:
    explicit ZBuffer(const CameraIntrinsics& k) : k_(k), depth_(k.width, k.height) {
        k.validate();
        ids_.assign(depth_.values.size(), -1);
    }

    /// Draws one posed mesh. `id` is recorded per pixel for the nearest surface.
    void draw(const TriMesh& mesh, const Pose& pose, int id = 0) {
        std::vector<Vec3> cam(mesh.vertices.size());
        for (std::size_t i = 0; i < cam.size(); ++i) cam[i] = pose.apply(mesh.vertices[i]);
        for (const auto& t : mesh.triangles) {
            const std::array<Vec3, 3> tri{cam[t[0]], cam[t[1]], cam[t[2]]};
            if (tri[0].z >= kNearPlane && tri[1].z >= kNearPlane && tri[2].z >= kNearPlane) {
                draw_triangle(tri[0], tri[1], tri[2], id);
                continue;
            }
            std::array<Vec3, 4> poly;
            const int n = raster_detail::clip_near(tri, poly);
            for (int i = 1; i + 1 < n; ++i) draw_triangle(poly[0], poly[i], poly[i + 1], id);
        }
    }

    const DepthMap& depth() const { return depth_; }
    const std::vector<int>& ids() const { return ids_; }
    DepthMap take_depth() && { return std::move(depth_); }

private:
    void draw_triangle(const Vec3& a, const Vec3& b, const Vec3& c, int id) {
        const double ax = k_.fx * a.x / a.z + k_.cx, ay = k_.fy * a.y / a.z + k_.cy;
        double bx = k_.fx * b.x / b.z + k_.cx, by = k_.fy * b.y / b.z + k_.cy;
        double cx = k_.fx * c.x / c.z + k_.cx, cy = k_.fy * c.y / c.z + k_.cy;
        double iza = 1.0 / a.z, izb = 1.0 / b.z, izc = 1.0 / c.z;

        double area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
        if (!(std::abs(area) > 0.0) || !std::isfinite(area)) return;
        if (area < 0.0) {
            std::swap(bx, cx);
            std::swap(by, cy);
            std::swap(izb, izc);
            area = -area;
        }

        // clamp in double before converting; near-plane vertices project far out
        auto clamp_px = [](double v, int hi) {
            return static_cast<int>(std::clamp(v, -1.0, static_cast<double>(hi)));
        };
        const int x0 = std::max(0, clamp_px(std::floor(std::min({ax, bx, cx}) - 0.5), k_.width));
        const int x1 = std::min(k_.width - 1, clamp_px(std::ceil(std::max({ax, bx, cx}) - 0.5), k_.width));
        const int y0 = std::max(0, clamp_px(std::floor(std::min({ay, by, cy}) - 0.5), k_.height));
        const int y1 = std::min(k_.height - 1, clamp_px(std::ceil(std::max({ay, by, cy}) - 0.5), k_.height));
        if (x0 > x1 || y0 > y1) return;

        // edge i is opposite vertex i
        const bool tl0 = raster_detail::is_top_left(cx - bx, cy - by);
        const bool tl1 = raster_detail::is_top_left(ax - cx, ay - cy);
        const bool tl2 = raster_detail::is_top_left(bx - ax, by - ay);
        const double inv_area = 1.0 / area;

        for (int py = y0; py <= y1; ++py) {
            const double sy = py + 0.5;
            for (int px = x0; px <= x1; ++px) {
                const double sx = px + 0.5;
                const double w0 = (cx - bx) * (sy - by) - (cy - by) * (sx - bx);
                const double w1 = (ax - cx) * (sy - cy) - (ay - cy) * (sx - cx);
                const double w2 = (bx - ax) * (sy - ay) - (by - ay) * (sx - ax);
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                if ((w0 == 0.0 && !tl0) || (w1 == 0.0 && !tl1) || (w2 == 0.0 && !tl2)) continue;
                // perspective-correct: 1/z is affine in screen space
                const double iz = (w0 * iza + w1 * izb + w2 * izc) * inv_area;
                if (!(iz > 0.0)) continue;
                const auto z = static_cast<float>(1.0 / iz);
                const std::size_t idx = static_cast<std::size_t>(py) * k_.width + px;
                float& cur = depth_.values[idx];
                if (cur == 0.0f || z < cur) {
                    cur = z;
                    ids_[idx] = id;
                }
            }
        }
    }

    CameraIntrinsics k_;
    DepthMap depth_;
    std::vector<int> ids_;
};

/// Nearest-surface depth of one posed mesh; uncovered pixels are 0.
inline DepthMap rasterize_depth(const TriMesh& mesh, const Pose& pose, const CameraIntrinsics& k) {
    ZBuffer zb(k);
    zb.draw(mesh, pose);
    return std::move(zb).take_depth();
}

/// Default visibility tolerance: max(0.5 mm, 0.002 * diameter).
inline double default_visibility_eps(double diameter) { return std::max(0.5, 0.002 * diameter); }

/// Per-sample visibility against a depth map rendered with the same camera.
/// Visible iff the sample projects inside the image in front of the camera,
/// its depth is <= depth(pixel) + eps, and its normal faces the camera.
inline std::vector<std::uint8_t> visible_mask(const SurfaceSamples& samples, const Pose& pose,
                                              const CameraIntrinsics& k, const DepthMap& depth,
                                              double eps) {
    if (!(eps > 0.0)) throw PreconditionError("visible_mask: eps must be > 0");
    if (depth.width != k.width || depth.height != k.height)
        throw PreconditionError("visible_mask: depth map size does not match the camera");
    std::vector<std::uint8_t> mask(samples.size(), 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Vec3 pc = pose.apply(samples.points[i]);
        const Projection pr = project_camera_point(k, pc);
        if (!pr.valid) continue;
        if (!(pr.u >= 0.0 && pr.v >= 0.0 && pr.u < k.width && pr.v < k.height)) continue;
        const int px = static_cast<int>(pr.u), py = static_cast<int>(pr.v);
        if (!(pc.z <= static_cast<double>(depth.at(px, py)) + eps)) continue;
        if (i < samples.normals.size()) {
            const Vec3 n = pose.rotation * samples.normals[i];
            // view ray from the camera center to the sample is pc itself
            if (!(n.dot(pc) < 0.0)) continue;
        }
        mask[i] = 1;
    }
    return mask;
}

}  // namespace posekit
