#pragma once

// Triangle meshes, area-uniform surface sampling and basic mesh statistics.
// Units are millimeters throughout (BOP model convention).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posekit/core.hpp"

namespace posekit {

using Triangle = std::array<std::uint32_t, 3>;

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
    /// Either empty or one unit normal per vertex.
    std::vector<Vec3> vertex_normals;

    bool has_normals() const { return !vertex_normals.empty(); }

    /// Throws PreconditionError naming the first violated invariant.
    void validate() const {
        for (std::size_t i = 0; i < vertices.size(); ++i)
            if (!vertices[i].is_finite())
                throw PreconditionError("mesh vertex " + std::to_string(i) + " is not finite");
        for (std::size_t f = 0; f < triangles.size(); ++f)
            for (auto idx : triangles[f])
                if (idx >= vertices.size())
                    throw PreconditionError("mesh triangle " + std::to_string(f) +
                                            " references vertex " + std::to_string(idx) +
                                            " of " + std::to_string(vertices.size()));
        if (has_normals()) {
            if (vertex_normals.size() != vertices.size())
                throw PreconditionError("mesh has " + std::to_string(vertex_normals.size()) +
                                        " normals for " + std::to_string(vertices.size()) +
                                        " vertices");
            for (std::size_t i = 0; i < vertex_normals.size(); ++i)
                if (std::abs(vertex_normals[i].norm() - 1.0) > 1e-6)
                    throw PreconditionError("vertex normal " + std::to_string(i) +
                                            " is not unit length");
        }
    }

    std::array<Vec3, 3> corners(std::size_t f) const {
        const auto& t = triangles[f];
        return {vertices[t[0]], vertices[t[1]], vertices[t[2]]};
    }

    /// Unnormalized face normal; its length is twice the triangle area.
    Vec3 face_cross(std::size_t f) const {
        const auto [a, b, c] = corners(f);
        return (b - a).cross(c - a);
    }
    double triangle_area(std::size_t f) const { return 0.5 * face_cross(f).norm(); }

    double surface_area() const {
        double total = 0.0;
        for (std::size_t f = 0; f < triangles.size(); ++f) total += triangle_area(f);
        return total;
    }

    /// Returns a copy with every vertex mapped through `pose`.
    TriMesh transformed(const Pose& pose) const {
        TriMesh out = *this;
        for (auto& v : out.vertices) v = pose.apply(v);
        for (auto& n : out.vertex_normals) n = pose.rotation * n;
        return out;
    }
};

struct BoundingBox {
    Vec3 min;
    Vec3 max;
    Vec3 size() const { return max - min; }
    Vec3 center() const { return (min + max) * 0.5; }
};

inline BoundingBox bounding_box(std::span<const Vec3> points) {
    if (points.empty()) throw PreconditionError("bounding_box: no points");
    BoundingBox box{points[0], points[0]};
    for (const auto& p : points) {
        box.min = {std::min(box.min.x, p.x), std::min(box.min.y, p.y), std::min(box.min.z, p.z)};
        box.max = {std::max(box.max.x, p.x), std::max(box.max.y, p.y), std::max(box.max.z, p.z)};
    }
    return box;
}

/// Largest distance between any two points. Exact.
///
/// Up to 2048 points every pair is visited. Beyond that, points are ordered by
/// their distance r_i to the centroid and a pair (i, j) is skipped once
/// r_i + r_j cannot beat the best distance found so far, which gives the same
/// result as the full scan.
inline double point_set_diameter(std::span<const Vec3> points) {
    if (points.size() < 2) throw PreconditionError("diameter needs at least 2 points");
    double best_sq = 0.0;
    if (points.size() <= 2048) {
        for (std::size_t i = 0; i < points.size(); ++i)
            for (std::size_t j = i + 1; j < points.size(); ++j)
                best_sq = std::max(best_sq, (points[i] - points[j]).squared_norm());
        return std::sqrt(best_sq);
    }
    Vec3 centroid{};
    for (const auto& p : points) centroid += p;
    centroid = centroid / static_cast<double>(points.size());
    struct Item {
        double radius;
        std::size_t index;
    };
    std::vector<Item> order(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        order[i] = {distance(points[i], centroid), i};
    std::sort(order.begin(), order.end(), [](const Item& a, const Item& b) {
        return a.radius > b.radius || (a.radius == b.radius && a.index < b.index);
    });
    // seed with a cheap lower bound so pruning starts early
    for (std::size_t j = 1; j < order.size(); ++j)
        best_sq = std::max(best_sq, (points[order[0].index] - points[order[j].index]).squared_norm());
    double best = std::sqrt(best_sq);
    for (std::size_t i = 0; i < order.size(); ++i) {
        // bound slightly relaxed so rounding in the radii never prunes the true pair
        if (2.0 * order[i].radius * (1.0 + 1e-12) < best) break;
        const Vec3& pi = points[order[i].index];
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            if ((order[i].radius + order[j].radius) * (1.0 + 1e-12) < best) break;
            const double d = (pi - points[order[j].index]).squared_norm();
            if (d > best_sq) {
                best_sq = d;
                best = std::sqrt(best_sq);
            }
        }
    }
    return std::sqrt(best_sq);
}

/// Max pairwise vertex distance (mm).
inline double mesh_diameter(const TriMesh& mesh) {
    if (mesh.vertices.size() < 2) throw PreconditionError("mesh_diameter: fewer than 2 vertices");
    return point_set_diameter(mesh.vertices);
}

/// Area-weighted average of incident face normals. Zero-area faces add
/// nothing; vertices without any usable face get (0, 0, 1).
inline TriMesh compute_vertex_normals(const TriMesh& mesh) {
    TriMesh out = mesh;
    std::vector<Vec3> acc(mesh.vertices.size());
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const Vec3 n = mesh.face_cross(f);  // length = 2 * area
        if (!(n.squared_norm() > 0.0) || !n.is_finite()) continue;
        for (auto idx : mesh.triangles[f]) acc[idx] += n;
    }
    out.vertex_normals.resize(mesh.vertices.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double len = acc[i].norm();
        out.vertex_normals[i] = len > 0.0 ? acc[i] / len : Vec3{0, 0, 1};
    }
    return out;
}

struct SurfaceSamples {
    std::vector<Vec3> points;
    /// Unit face normal of the source triangle.
    std::vector<Vec3> normals;
    std::vector<std::uint32_t> source_triangle;
    /// sqrt(total area / count)
    double mean_spacing = 0.0;

    std::size_t size() const { return points.size(); }
};

/// Draws `count` points uniformly by area: a triangle is picked with
/// probability proportional to its area, then a point uniformly inside it.
/// Deterministic for a given seed.
inline SurfaceSamples sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed) {
    if (count < 1) throw PreconditionError("sample_surface: count must be >= 1");
    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const double a = mesh.triangle_area(f);
        total += std::isfinite(a) ? a : 0.0;
        cumulative[f] = total;
    }
    if (!(total > 0.0)) throw PreconditionError("sample_surface: mesh has zero surface area");

    SurfaceSamples out;
    out.points.reserve(count);
    out.normals.reserve(count);
    out.source_triangle.reserve(count);
    out.mean_spacing = std::sqrt(total / static_cast<double>(count));

    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const double pick = rng.uniform() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        std::size_t f = static_cast<std::size_t>(it - cumulative.begin());
        if (f >= cumulative.size()) f = cumulative.size() - 1;
        // zero-area triangles have an empty cumulative interval and are never hit
        const auto [a, b, c] = mesh.corners(f);
        const double s = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        const Vec3 p = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        out.points.push_back(p);
        out.normals.push_back(mesh.face_cross(f).normalized());
        out.source_triangle.push_back(static_cast<std::uint32_t>(f));
    }
    return out;
}

}  // namespace posekit
