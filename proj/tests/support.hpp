#pragma once

// Test fixtures and independent reference implementations.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "posekit/posekit.hpp"

namespace fixtures {

using namespace posekit;

// ---------------------------------------------------------------------------
// meshes
// ---------------------------------------------------------------------------

inline TriMesh box(double sx, double sy, double sz) {
    TriMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back({(i & 1 ? 0.5 : -0.5) * sx, (i & 2 ? 0.5 : -0.5) * sy, (i & 4 ? 0.5 : -0.5) * sz});
    // outward-facing (counter-clockwise seen from outside)
    const std::array<std::array<std::uint32_t, 4>, 6> quads{{{0, 2, 3, 1},
                                                             {4, 5, 7, 6},
                                                             {0, 1, 5, 4},
                                                             {2, 6, 7, 3},
                                                             {0, 4, 6, 2},
                                                             {1, 3, 7, 5}}};
    for (const auto& q : quads) {
        m.triangles.push_back({q[0], q[1], q[2]});
        m.triangles.push_back({q[0], q[2], q[3]});
    }
    return m;
}

/// UV ellipsoid with semi-axes (a, b, c); convex for any resolution.
inline TriMesh ellipsoid(double a, double b, double c, int stacks, int slices) {
    TriMesh m;
    m.vertices.push_back({0, 0, c});
    for (int i = 1; i < stacks; ++i) {
        const double th = kPi * i / stacks;
        for (int j = 0; j < slices; ++j) {
            const double ph = 2 * kPi * j / slices;
            m.vertices.push_back({a * std::sin(th) * std::cos(ph), b * std::sin(th) * std::sin(ph), c * std::cos(th)});
        }
    }
    m.vertices.push_back({0, 0, -c});
    const auto ring = [&](int i, int j) {
        return static_cast<std::uint32_t>(1 + (i - 1) * slices + ((j % slices) + slices) % slices);
    };
    const auto bottom = static_cast<std::uint32_t>(m.vertices.size() - 1);
    for (int j = 0; j < slices; ++j) m.triangles.push_back({0, ring(1, j), ring(1, j + 1)});
    for (int i = 1; i + 1 < stacks; ++i)
        for (int j = 0; j < slices; ++j) {
            m.triangles.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
            m.triangles.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
        }
    for (int j = 0; j < slices; ++j) m.triangles.push_back({bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
    return m;
}

inline TriMesh sphere(double r, int stacks = 24, int slices = 48) { return ellipsoid(r, r, r, stacks, slices); }

/// Closed n-gon prism along z (a faceted cylinder).
inline TriMesh prism(double radius, double height, int n) {
    TriMesh m;
    for (int k = 0; k < 2; ++k)
        for (int j = 0; j < n; ++j) {
            const double ph = 2 * kPi * j / n;
            m.vertices.push_back({radius * std::cos(ph), radius * std::sin(ph), (k ? 0.5 : -0.5) * height});
        }
    m.vertices.push_back({0, 0, -0.5 * height});
    m.vertices.push_back({0, 0, 0.5 * height});
    const auto cb = static_cast<std::uint32_t>(2 * n), ct = cb + 1;
    for (int j = 0; j < n; ++j) {
        const auto a = static_cast<std::uint32_t>(j), b = static_cast<std::uint32_t>((j + 1) % n);
        const auto a2 = a + static_cast<std::uint32_t>(n), b2 = b + static_cast<std::uint32_t>(n);
        m.triangles.push_back({a, b, b2});
        m.triangles.push_back({a, b2, a2});
        m.triangles.push_back({cb, b, a});
        m.triangles.push_back({ct, a2, b2});
    }
    return m;
}

inline TriMesh tetrahedron(double s) {
    TriMesh m;
    m.vertices = {{s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}};
    m.triangles = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
    return m;
}

/// Random vertex cloud with a few triangles (metric fixtures use vertices only).
inline TriMesh random_cloud_mesh(Rng& rng, std::size_t n, double scale) {
    TriMesh m;
    for (std::size_t i = 0; i < n; ++i)
        m.vertices.push_back({rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)});
    for (std::size_t i = 0; i + 2 < n; i += 3)
        m.triangles.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1),
                               static_cast<std::uint32_t>(i + 2)});
    return m;
}

/// Convex fixture number `i`: ellipsoids, boxes, prisms and tetrahedra.
inline TriMesh convex_fixture(Rng& rng, int i) {
    switch (i % 4) {
        case 0: {
            const int stacks = static_cast<int>(rng.uniform_int(4, 12));
            const int slices = static_cast<int>(rng.uniform_int(5, 20));
            return ellipsoid(rng.uniform(20, 60), rng.uniform(20, 60), rng.uniform(20, 60), stacks, slices);
        }
        case 1: return box(rng.uniform(20, 100), rng.uniform(20, 100), rng.uniform(20, 100));
        case 2: return prism(rng.uniform(15, 50), rng.uniform(20, 100), static_cast<int>(rng.uniform_int(3, 60)));
        default: return tetrahedron(rng.uniform(15, 40));
    }
}

inline CameraIntrinsics default_camera() { return {600.0, 600.0, 320.0, 240.0, 640, 480}; }

/// A random pose placing the model origin in front of the camera.
inline Pose random_pose_in_view(Rng& rng, double z_lo = 400, double z_hi = 800) {
    const double z = rng.uniform(z_lo, z_hi);
    return {rng.rotation(), {rng.uniform(-0.15, 0.15) * z, rng.uniform(-0.1, 0.1) * z, z}};
}

/// Random symmetry spec: identity only, a discrete cyclic group, a continuous
/// axis, or both.
inline SymmetrySpec random_symmetry(Rng& rng) {
    SymmetrySpec s;
    const auto kind = rng.uniform_int(0, 3);
    const Vec3 axis = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
    const Vec3 offset{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    if (kind == 1 || kind == 3) {
        const int n = static_cast<int>(rng.uniform_int(2, 4));
        for (int k = 1; k < n; ++k) {
            Pose p;
            p.rotation = axis_angle(axis, 2 * kPi * k / n);
            p.translation = offset - p.rotation * offset;
            s.discrete.push_back(p);
        }
    }
    if (kind == 2) s.continuous.push_back({axis, offset});
    if (kind == 3) {
        // an axis perpendicular to the discrete one
        const Vec3 other = axis.cross(std::abs(axis.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0}).normalized();
        s.continuous.push_back({other, {0, 0, 0}});
    }
    return s;
}

// ---------------------------------------------------------------------------
// lattices for saliency analytics
// ---------------------------------------------------------------------------

inline std::vector<Vec3> plane_lattice(int n, double spacing) {
    std::vector<Vec3> p;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) p.push_back({i * spacing, j * spacing, 0.0});
    return p;
}

inline std::vector<Vec3> line_lattice(int n, double spacing) {
    std::vector<Vec3> p;
    for (int i = 0; i < n; ++i) p.push_back({i * spacing, 0.0, 0.0});
    return p;
}

/// Cubic lattice points inside a ball of `radius` lattice units.
inline std::vector<Vec3> ball_lattice(double radius, double spacing) {
    std::vector<Vec3> p;
    const int r = static_cast<int>(std::ceil(radius));
    for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j)
            for (int k = -r; k <= r; ++k)
                if (i * i + j * j + k * k <= radius * radius) p.push_back({i * spacing, j * spacing, k * spacing});
    return p;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// temp directories
// ---------------------------------------------------------------------------

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rd(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("posekit_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures

namespace oracle {

using namespace posekit;

inline double brute_diameter(std::span<const Vec3> pts) {
    double best = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, (pts[i] - pts[j]).norm());
    return best;
}

/// Eigenvalues (descending) of a symmetric 3x3 matrix by bisection on
/// p(l) = det(A - l I), bracketed by Gershgorin bounds and the critical
/// points of p.
inline std::array<double, 3> bisection_eigenvalues(const Mat3& input) {
    // shift by the mean diagonal so clustered spectra do not cancel
    const double shift = input.trace() / 3;
    Mat3 a = input;
    for (int i = 0; i < 3; ++i) a.m[i * 4] -= shift;
    auto p = [&](long double l) {
        const long double a00 = a.m[0] - l, a11 = a.m[4] - l, a22 = a.m[8] - l;
        const long double a01 = a.m[1], a02 = a.m[2], a12 = a.m[5];
        return a00 * (a11 * a22 - a12 * a12) - a01 * (a01 * a22 - a12 * a02) + a02 * (a01 * a12 - a11 * a02);
    };
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int r = 0; r < 3; ++r) {
        double rad = 0.0;
        for (int c = 0; c < 3; ++c)
            if (c != r) rad += std::abs(a.m[r * 3 + c]);
        lo = std::min(lo, a.m[r * 4] - rad);
        hi = std::max(hi, a.m[r * 4] + rad);
    }
    lo -= 1e-12 * (1 + std::abs(lo));
    hi += 1e-12 * (1 + std::abs(hi));
    // p'(l) = -3 l^2 + 2 tr l - c1, with c1 the sum of principal 2x2 minors
    const double tr = a.trace();
    const double c1 = a.m[0] * a.m[4] - a.m[1] * a.m[1] + a.m[0] * a.m[8] - a.m[2] * a.m[2] +
                      a.m[4] * a.m[8] - a.m[5] * a.m[5];
    const double disc = 4 * tr * tr - 12 * c1;
    if (disc <= 0) return {shift + tr / 3, shift + tr / 3, shift + tr / 3};
    const double s = std::sqrt(disc);
    const double k1 = std::clamp((2 * tr - s) / 6, lo, hi), k2 = std::clamp((2 * tr + s) / 6, lo, hi);
    auto root = [&](long double x0, long double x1) -> double {
        long double f0 = p(x0), f1 = p(x1);
        if (f0 == 0) return static_cast<double>(x0);
        if (f1 == 0) return static_cast<double>(x1);
        if ((f0 > 0) == (f1 > 0)) return static_cast<double>(std::abs(f0) < std::abs(f1) ? x0 : x1);
        for (int it = 0; it < 200; ++it) {
            const long double mid = 0.5L * (x0 + x1);
            if (mid == x0 || mid == x1) break;
            const long double fm = p(mid);
            if (fm == 0) return static_cast<double>(mid);
            if ((fm > 0) == (f0 > 0)) {
                x0 = mid;
                f0 = fm;
            } else {
                x1 = mid;
            }
        }
        return static_cast<double>(0.5L * (x0 + x1));
    };
    std::array<double, 3> e{shift + root(k2, hi), shift + root(k1, k2), shift + root(lo, k1)};
    std::sort(e.begin(), e.end(), std::greater<>());
    return e;
}

/// Ray/triangle intersection (Moller-Trumbore); returns the ray parameter.
inline std::optional<double> ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 pv = d.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-18) return std::nullopt;
    const double inv = 1.0 / det;
    const Vec3 tv = o - a;
    const double u = tv.dot(pv) * inv;
    if (u < 0.0 || u > 1.0) return std::nullopt;
    const Vec3 qv = tv.cross(e1);
    const double v = d.dot(qv) * inv;
    if (v < 0.0 || u + v > 1.0) return std::nullopt;
    const double t = e2.dot(qv) * inv;
    if (t <= 0.0) return std::nullopt;
    return t;
}

/// Nearest camera-frame z along the ray through a pixel center, 0 on a miss.
inline double raycast_depth(const TriMesh& mesh, const Pose& pose, const CameraIntrinsics& k, int px, int py) {
    const Vec3 d{(px + 0.5 - k.cx) / k.fx, (py + 0.5 - k.cy) / k.fy, 1.0};
    double best = 0.0;
    for (const auto& t : mesh.triangles) {
        const Vec3 a = pose.apply(mesh.vertices[t[0]]), b = pose.apply(mesh.vertices[t[1]]),
                   c = pose.apply(mesh.vertices[t[2]]);
        const auto hit = ray_triangle({0, 0, 0}, d, a, b, c);
        if (hit && *hit * d.z >= kNearPlane && (best == 0.0 || *hit * d.z < best)) best = *hit * d.z;
    }
    return best;
}

/// Whether the open segment camera -> p crosses any triangle other than
/// near p itself.
inline bool segment_blocked(const TriMesh& mesh, const Pose& pose, const Vec3& pc, double slack) {
    const double len = pc.norm();
    const Vec3 d = pc / len;
    for (const auto& t : mesh.triangles) {
        const Vec3 a = pose.apply(mesh.vertices[t[0]]), b = pose.apply(mesh.vertices[t[1]]),
                   c = pose.apply(mesh.vertices[t[2]]);
        const auto hit = ray_triangle({0, 0, 0}, d, a, b, c);
        if (hit && *hit < len - slack) return true;
    }
    return false;
}

inline double mssd(std::span<const Vec3> v, const Pose& est, const Pose& gt, std::span<const Pose> syms) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : syms) {
        double worst = 0.0;
        for (const auto& x : v) {
            const Vec3 a = est.rotation * x + est.translation;
            const Vec3 sx = s.rotation * x + s.translation;
            const Vec3 b = gt.rotation * sx + gt.translation;
            worst = std::max(worst, (a - b).norm());
        }
        best = std::min(best, worst);
    }
    return best;
}

inline double mspd(std::span<const Vec3> v, const Pose& est, const Pose& gt, std::span<const Pose> syms,
                   const CameraIntrinsics& k) {
    auto proj = [&](const Vec3& p) { return std::array<double, 2>{k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy}; };
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : syms) {
        double worst = 0.0;
        for (const auto& x : v) {
            const auto a = proj(est.rotation * x + est.translation);
            const auto b = proj(gt.rotation * (s.rotation * x + s.translation) + gt.translation);
            const double du = a[0] - b[0], dv = a[1] - b[1];
            worst = std::max(worst, std::sqrt(du * du + dv * dv));
        }
        best = std::min(best, worst);
    }
    return best;
}

inline std::pair<double, double> add_adi(std::span<const Vec3> v, const Pose& est, const Pose& gt) {
    double add = 0.0, adi = 0.0;
    for (const auto& x : v) {
        const Vec3 a = est.rotation * x + est.translation;
        add += (a - (gt.rotation * x + gt.translation)).norm();
        double m = std::numeric_limits<double>::infinity();
        for (const auto& y : v) m = std::min(m, (a - (gt.rotation * y + gt.translation)).norm());
        adi += m;
    }
    return {add / static_cast<double>(v.size()), adi / static_cast<double>(v.size())};
}

/// Literal per-pixel VSD.
inline double vsd(const DepthMap& e, const DepthMap& g, const DepthMap& t, double tau, double delta) {
    std::size_t uni = 0, bad = 0;
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x) {
            const double de = e.at(x, y), dg = g.at(x, y), dt = t.at(x, y);
            const bool ve = de > 0 && (dt == 0 || de - dt <= delta);
            const bool vg = dg > 0 && (dt == 0 || dg - dt <= delta);
            if (!ve && !vg) continue;
            ++uni;
            if (!(ve && vg) || std::abs(de - dg) > tau) ++bad;
        }
    return uni == 0 ? 1.0 : static_cast<double>(bad) / static_cast<double>(uni);
}

}  // namespace oracle
