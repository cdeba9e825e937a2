#pragma once

// Geometric keypoints from surface samples.
//
// Each visible sample p gets the covariance of its k nearest visible
// neighbors taken about p itself,
//
//     C_p = 1/|N(p)| * sum_i (x_i - p)(x_i - p)^T,
//
// whose descending eigenvalues l1 >= l2 >= l3 give the Harris-style ratio
// l1 / (l1 + l2 + l3). The ratio is weighted by a local density rho in (0, 1]
// (neighbor count within a radius, normalized by the maximum count):
//
//     S = rho * l1 / (l1 + l2 + l3).
//
// Samples with S above a threshold become keypoints; greedy non-maximum
// suppression thins them and weights are S / max S. Keypoints are encoded
// into an image as a Gaussian-splatted heatmap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "posekit/core.hpp"
#include "posekit/eigen3.hpp"
#include "posekit/geometry.hpp"
#include "posekit/image_io.hpp"
#include "posekit/raster.hpp"
#include "posekit/spatial.hpp"

namespace posekit {

struct NeighborhoodConfig {
    std::size_t k = 16;
    double density_radius = 1.0;  // mm

    void validate() const {
        if (k < 4) throw PreconditionError("neighborhood k must be >= 4");
        if (!(density_radius > 0.0) || !std::isfinite(density_radius))
            throw PreconditionError("density radius must be > 0");
    }
};

struct SaliencySample {
    Vec3 point;
    Eigenvalues3 eigenvalues{0, 0, 0};
    double density = 0.0;
    double saliency = 0.0;
    /// Index of the sample in the input set.
    std::size_t sample_index = 0;
};

struct KeypointSet {
    std::vector<Vec3> points;
    std::vector<double> weights;
    /// Sample index each keypoint came from (not serialized).
    std::vector<std::size_t> sample_indices;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Covariance of `neighbors` about `p` (not about their centroid).
inline Mat3 covariance(const Vec3& p, std::span<const Vec3> neighbors) {
    if (neighbors.empty()) throw PreconditionError("covariance: empty neighbor list");
    Mat3 c = Mat3::zero();
    for (const auto& x : neighbors) c += Mat3::outer(x - p, x - p);
    return c * (1.0 / static_cast<double>(neighbors.size()));
}

/// rho_i = c_i / max_j c_j with c_i the number of points within `radius`
/// of point i, i included.
inline std::vector<double> local_density(std::span<const Vec3> points, double radius) {
    if (!(radius > 0.0)) throw PreconditionError("local_density: radius must be > 0");
    if (points.empty()) throw PreconditionError("local_density: no points");
    const PointGrid grid(points, radius);
    std::vector<double> counts(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
        counts[i] = static_cast<double>(grid.count_within(points[i], radius));
    });
    const double max_count = *std::max_element(counts.begin(), counts.end());
    for (auto& c : counts) c /= max_count;
    return counts;
}

/// Harris ratio l1 / (l1 + l2 + l3), 0 for a vanishing trace.
inline double harris_ratio(const Eigenvalues3& e) {
    const double sum = e[0] + e[1] + e[2];
    return sum > 0.0 ? e[0] / sum : 0.0;
}

/// Saliency of every point in `points`, neighbors drawn from the same set.
inline std::vector<SaliencySample> saliency_field(std::span<const Vec3> points,
                                                  const NeighborhoodConfig& cfg) {
    cfg.validate();
    if (points.size() < cfg.k + 1)
        throw PreconditionError("saliency_field: " + std::to_string(points.size()) +
                                " visible samples, need at least k+1 = " +
                                std::to_string(cfg.k + 1));
    const auto density = local_density(points, cfg.density_radius);
    const PointGrid grid(points, cfg.density_radius);
    std::vector<SaliencySample> out(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
        const auto nn = grid.knn(points[i], cfg.k, i);
        Mat3 c = Mat3::zero();
        for (const auto& n : nn) {
            const Vec3 d = points[n.index] - points[i];
            c += Mat3::outer(d, d);
        }
        c = c * (1.0 / static_cast<double>(nn.size()));
        auto& s = out[i];
        s.point = points[i];
        s.eigenvalues = eigen3_sym(c);
        // PSD up to rounding
        for (auto& l : s.eigenvalues)
            if (l < 0.0 && l > -1e-9 * std::max(1.0, s.eigenvalues[0])) l = 0.0;
        s.density = density[i];
        s.saliency = s.density * harris_ratio(s.eigenvalues);
        s.sample_index = i;
    });
    return out;
}

/// Saliency over the visible subset of `samples`; sample_index refers to
/// positions in `samples`.
inline std::vector<SaliencySample> saliency_field(const SurfaceSamples& samples,
                                                  std::span<const std::uint8_t> visible,
                                                  const NeighborhoodConfig& cfg) {
    if (visible.size() != samples.size())
        throw PreconditionError("saliency_field: mask size does not match sample count");
    std::vector<Vec3> pts;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (visible[i]) {
            pts.push_back(samples.points[i]);
            idx.push_back(i);
        }
    auto field = saliency_field(std::span<const Vec3>(pts), cfg);
    for (auto& s : field) s.sample_index = idx[s.sample_index];
    return field;
}

inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

/// Greedy selection: candidates with S > tau in descending S (ties by
/// ascending sample index), each dropped if within `nms_radius` of an
/// already kept keypoint, stopping at `max_count`. Weights are S / S_max.
inline KeypointSet select_keypoints(std::span<const SaliencySample> field, double tau,
                                    double nms_radius, std::size_t max_count) {
    if (!(tau >= 0.0)) throw PreconditionError("select_keypoints: tau must be >= 0");
    if (!(nms_radius >= 0.0)) throw PreconditionError("select_keypoints: nms radius must be >= 0");
    if (max_count < 1) throw PreconditionError("select_keypoints: max_count must be >= 1");

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < field.size(); ++i)
        if (field[i].saliency > tau) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (field[a].saliency != field[b].saliency) return field[a].saliency > field[b].saliency;
        return field[a].sample_index < field[b].sample_index;
    });

    KeypointSet out;
    std::vector<double> kept_s;
    // kept points bucketed by nms_radius cells
    using CellKey = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
    struct KeyHash {
        std::size_t operator()(const CellKey& k) const {
            return splitmix64(static_cast<std::uint64_t>(std::get<0>(k)) * 73856093ULL ^
                              static_cast<std::uint64_t>(std::get<1>(k)) * 19349663ULL ^
                              static_cast<std::uint64_t>(std::get<2>(k)) * 83492791ULL);
        }
    };
    std::unordered_map<CellKey, std::vector<std::size_t>, KeyHash> buckets;
    auto cell_of = [&](const Vec3& p) {
        return CellKey{static_cast<std::int64_t>(std::floor(p.x / nms_radius)),
                       static_cast<std::int64_t>(std::floor(p.y / nms_radius)),
                       static_cast<std::int64_t>(std::floor(p.z / nms_radius))};
    };
    const double r2 = nms_radius * nms_radius;

    for (std::size_t idx : order) {
        if (out.size() >= max_count) break;
        const Vec3& p = field[idx].point;
        if (nms_radius > 0.0) {
            const auto [cx, cy, cz] = cell_of(p);
            bool suppressed = false;
            for (std::int64_t dx = -1; dx <= 1 && !suppressed; ++dx)
                for (std::int64_t dy = -1; dy <= 1 && !suppressed; ++dy)
                    for (std::int64_t dz = -1; dz <= 1 && !suppressed; ++dz) {
                        auto it = buckets.find({cx + dx, cy + dy, cz + dz});
                        if (it == buckets.end()) continue;
                        for (std::size_t k : it->second)
                            if ((out.points[k] - p).squared_norm() < r2) {
                                suppressed = true;
                                break;
                            }
                    }
            if (suppressed) continue;
            buckets[cell_of(p)].push_back(out.size());
        }
        out.points.push_back(p);
        kept_s.push_back(field[idx].saliency);
        out.sample_indices.push_back(field[idx].sample_index);
    }
    if (!kept_s.empty()) {
        const double smax = kept_s.front();
        out.weights.resize(kept_s.size());
        for (std::size_t i = 0; i < kept_s.size(); ++i) out.weights[i] = kept_s[i] / smax;
        out.weights.front() = 1.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct KeypointConfig {
    std::size_t samples = 10000;
    std::size_t k = 16;
    /// density radius = factor * mean sample spacing
    double density_radius_factor = 2.0;
    /// tau = tau_rel * max S over the field
    double tau_rel = 0.6;
    /// NMS radius in mm; unset means the density radius. 0 disables NMS.
    std::optional<double> nms_radius;
    std::size_t max_count = 64;
    std::uint64_t seed = 0;
};

struct ViewSpec {
    CameraIntrinsics camera;
    Pose pose;
    /// Visibility tolerance in mm; unset means max(0.5, 0.002 * diameter).
    std::optional<double> eps;
    /// Extra occluders already posed in the camera frame.
    std::vector<TriMesh> occluders;
};

struct KeypointResult {
    SurfaceSamples samples;
    std::vector<std::uint8_t> visible;
    std::vector<SaliencySample> field;
    KeypointSet keypoints;
    double density_radius = 0.0;
    double nms_radius = 0.0;
    double tau = 0.0;
};

/// sample -> (rasterize -> visibility) -> saliency -> select. Without a view
/// every sample counts as visible.
inline KeypointResult extract_keypoints(const TriMesh& mesh, const KeypointConfig& cfg,
                                        const std::optional<ViewSpec>& view = std::nullopt) {
    if (!(cfg.tau_rel >= 0.0)) throw PreconditionError("tau_rel must be >= 0");
    KeypointResult r;
    r.samples = sample_surface(mesh, cfg.samples, cfg.seed);
    r.density_radius = cfg.density_radius_factor * r.samples.mean_spacing;
    r.nms_radius = cfg.nms_radius.value_or(r.density_radius);
    if (view) {
        view->camera.validate();
        view->pose.validate();
        ZBuffer zb(view->camera);
        zb.draw(mesh, view->pose);
        for (const auto& occ : view->occluders) zb.draw(occ, Pose::identity());
        const double eps = view->eps.value_or(default_visibility_eps(mesh_diameter(mesh)));
        r.visible = visible_mask(r.samples, view->pose, view->camera, zb.depth(), eps);
    } else {
        r.visible.assign(r.samples.size(), 1);
    }
    r.field = saliency_field(r.samples, r.visible, NeighborhoodConfig{cfg.k, r.density_radius});
    double smax = 0.0;
    for (const auto& s : r.field) smax = std::max(smax, s.saliency);
    r.tau = cfg.tau_rel * smax;
    r.keypoints = select_keypoints(r.field, r.tau, r.nms_radius, cfg.max_count);
    return r;
}

// ---------------------------------------------------------------------------
// Heatmap
// ---------------------------------------------------------------------------

struct Heatmap {
    int width = 0;
    int height = 0;
    double sigma = 0.0;
    std::vector<float> values;  // row-major, each in [0, 1]

    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

enum class HeatmapCombine { Max, SumClamp };

/// Projects each keypoint with `k`/`pose` and splats w * exp(-d^2 / (2 sigma^2))
/// over pixel centers within 3 sigma. Off-image and behind-camera keypoints
/// are skipped.
inline Heatmap render_heatmap(const KeypointSet& kps, const Pose& pose, const CameraIntrinsics& k,
                              int width, int height, double sigma,
                              HeatmapCombine combine = HeatmapCombine::Max) {
    if (!(sigma > 0.0)) throw PreconditionError("render_heatmap: sigma must be > 0");
    if (width < 1 || height < 1) throw PreconditionError("render_heatmap: size must be >= 1");
    if (kps.weights.size() != kps.points.size())
        throw PreconditionError("render_heatmap: keypoint weights/points size mismatch");
    Heatmap hm{width, height, sigma, std::vector<float>(static_cast<std::size_t>(width) * height)};
    std::vector<double> acc(hm.values.size(), 0.0);
    const double support = 3.0 * sigma;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const auto proj = project(k, pose, kps.points);
    for (std::size_t i = 0; i < proj.size(); ++i) {
        const auto& q = proj[i];
        if (!q.valid || !(q.u >= 0.0 && q.v >= 0.0 && q.u < width && q.v < height)) continue;
        const double w = kps.weights[i];
        const int x0 = std::max(0, static_cast<int>(std::floor(q.u - support - 0.5)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(q.u + support - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(q.v - support - 0.5)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(q.v + support - 0.5)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - q.u, dy = y + 0.5 - q.v;
                const double d2 = dx * dx + dy * dy;
                if (d2 > support * support) continue;
                const double g = w * std::exp(-d2 * inv2s2);
                double& a = acc[static_cast<std::size_t>(y) * width + x];
                a = combine == HeatmapCombine::Max ? std::max(a, g) : a + g;
            }
    }
    for (std::size_t i = 0; i < acc.size(); ++i)
        hm.values[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
    return hm;
}

/// 16-bit encoding: round(v * 65535).
inline GrayImage16 heatmap_to_png16(const Heatmap& hm) {
    GrayImage16 img{hm.width, hm.height, std::vector<std::uint16_t>(hm.values.size())};
    for (std::size_t i = 0; i < hm.values.size(); ++i)
        img.values[i] = static_cast<std::uint16_t>(
            std::lround(std::clamp(static_cast<double>(hm.values[i]), 0.0, 1.0) * 65535.0));
    return img;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json keypoints_to_json(const KeypointSet& kps) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : kps.points) pts.push_back({p.x, p.y, p.z});
    return {{"points", pts}, {"weights", kps.weights}};
}

inline KeypointSet keypoints_from_json(const nlohmann::json& j) {
    KeypointSet k;
    try {
        for (const auto& p : j.at("points")) {
            if (!p.is_array() || p.size() != 3)
                throw ParseError("keypoint entry must be an array of 3 numbers");
            k.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
        }
        for (const auto& w : j.at("weights")) k.weights.push_back(w.get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("keypoint JSON: ") + e.what());
    }
    if (k.points.size() != k.weights.size())
        throw ParseError("keypoint JSON: " + std::to_string(k.points.size()) + " points but " +
                         std::to_string(k.weights.size()) + " weights");
    for (std::size_t i = 0; i < k.weights.size(); ++i)
        if (!(k.weights[i] > 0.0 && k.weights[i] <= 1.0))
            throw ParseError("keypoint JSON: weight " + std::to_string(i) + " outside (0, 1]");
    return k;
}

inline KeypointSet load_keypoints(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open keypoint file '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return keypoints_from_json(j);
}

}  // namespace posekit
