#pragma once

// Symmetry-aware pose-error metrics following the BOP protocol: VSD, MSSD,
// MSPD, ADD/ADI, rotation/translation error, BOP19 threshold grids and the
// average recall AR = (AR_VSD + AR_MSSD + AR_MSPD) / 3.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posekit/core.hpp"
#include "posekit/raster.hpp"
#include "posekit/spatial.hpp"

namespace posekit {

struct ContinuousSymmetry {
    Vec3 axis{0, 0, 1};
    Vec3 offset{};
};

struct SymmetrySpec {
    /// Always contains the identity exactly once (see normalized()).
    std::vector<Pose> discrete{Pose::identity()};
    std::vector<ContinuousSymmetry> continuous;

    bool is_symmetric() const { return discrete.size() > 1 || !continuous.empty(); }

    /// Adds a missing identity, drops duplicate identities, unit-normalizes axes.
    SymmetrySpec normalized() const {
        SymmetrySpec s;
        s.discrete = {Pose::identity()};
        for (const auto& p : discrete) {
            const bool is_id = (p.rotation - Mat3::identity()).max_abs() < 1e-9 &&
                               p.translation.norm() < 1e-9;
            if (!is_id) s.discrete.push_back(p);
        }
        for (auto c : continuous) {
            if (!(c.axis.norm() > 0.0)) throw PreconditionError("continuous symmetry axis is zero");
            c.axis = c.axis.normalized();
            s.continuous.push_back(c);
        }
        return s;
    }

    void validate() const {
        std::size_t ids = 0;
        for (const auto& p : discrete) {
            p.validate(1e-6);
            if ((p.rotation - Mat3::identity()).max_abs() < 1e-9 && p.translation.norm() < 1e-9)
                ++ids;
        }
        if (ids != 1) throw PreconditionError("symmetry set must contain the identity exactly once");
        for (const auto& c : continuous)
            if (std::abs(c.axis.norm() - 1.0) > 1e-9)
                throw PreconditionError("continuous symmetry axis is not unit length");
    }
};

namespace metrics_detail {

inline bool same_transform(const Pose& a, const Pose& b) {
    // ||Ra - Rb||_F = 2 sqrt(2) sin(angle / 2) ~ sqrt(2) * angle
    return (a.rotation - b.rotation).frobenius_norm() / std::sqrt(2.0) < 1e-6 &&
           (a.translation - b.translation).norm() < 1e-6;
}

}  // namespace metrics_detail

/// Discrete symmetries composed with every continuous axis sampled at
/// `step_degrees`, deduplicated. The identity comes first.
inline std::vector<Pose> expand_symmetries(const SymmetrySpec& spec, double step_degrees = 1.0) {
    if (!(step_degrees > 0.0)) throw PreconditionError("symmetry step must be > 0 degrees");
    std::vector<Pose> set = spec.normalized().discrete;
    for (const auto& c : spec.normalized().continuous) {
        const auto steps = std::max<long long>(1, std::llround(360.0 / step_degrees));
        std::vector<Pose> next;
        next.reserve(set.size() * static_cast<std::size_t>(steps));
        for (long long i = 0; i < steps; ++i) {
            const double angle = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(steps);
            Pose rot;
            rot.rotation = i == 0 ? Mat3::identity() : axis_angle(c.axis, angle);
            // rotation about the axis through `offset`
            rot.translation = c.offset - rot.rotation * c.offset;
            for (const auto& s : set) next.push_back(rot * s);
        }
        set = std::move(next);
    }
    std::vector<Pose> unique;
    for (const auto& s : set) {
        const bool dup = std::any_of(unique.begin(), unique.end(), [&](const Pose& u) {
            return metrics_detail::same_transform(u, s);
        });
        if (!dup) unique.push_back(s);
    }
    return unique;
}

/// min over symmetries S of max over vertices x of ||est(x) - gt(S(x))||, mm.
inline double mssd(std::span<const Vec3> vertices, const Pose& est, const Pose& gt,
                   std::span<const Pose> syms) {
    if (vertices.empty()) throw PreconditionError("mssd: no vertices");
    if (syms.empty()) throw PreconditionError("mssd: empty symmetry set");
    std::vector<Vec3> e(vertices.size());
    for (std::size_t i = 0; i < vertices.size(); ++i) e[i] = est.apply(vertices[i]);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : syms) {
        double worst = 0.0;
        for (std::size_t i = 0; i < vertices.size(); ++i) {
            worst = std::max(worst, (e[i] - gt.apply(s.apply(vertices[i]))).norm());
            if (worst >= best) break;
        }
        best = std::min(best, worst);
    }
    return best;
}

/// Like mssd but on pixel projections; depth is ignored. Throws when a
/// ground-truth vertex is at or behind the camera. An estimate vertex behind
/// the camera makes that symmetry's distance infinite.
inline double mspd(std::span<const Vec3> vertices, const Pose& est, const Pose& gt,
                   std::span<const Pose> syms, const CameraIntrinsics& k) {
    if (vertices.empty()) throw PreconditionError("mspd: no vertices");
    if (syms.empty()) throw PreconditionError("mspd: empty symmetry set");
    std::vector<Projection> pe(vertices.size());
    for (std::size_t i = 0; i < vertices.size(); ++i)
        pe[i] = project_camera_point(k, est.apply(vertices[i]));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : syms) {
        double worst = 0.0;
        for (std::size_t i = 0; i < vertices.size(); ++i) {
            const Projection pg = project_camera_point(k, gt.apply(s.apply(vertices[i])));
            if (!pg.valid)
                throw PreconditionError("mspd: vertex " + std::to_string(i) +
                                        " is behind the camera under the ground-truth pose");
            if (!pe[i].valid) {
                worst = std::numeric_limits<double>::infinity();
                break;
            }
            const double du = pe[i].u - pg.u, dv = pe[i].v - pg.v;
            worst = std::max(worst, std::sqrt(du * du + dv * dv));
            if (worst >= best) break;
        }
        best = std::min(best, worst);
    }
    return best;
}

struct AddAdi {
    double add = 0.0;
    double adi = 0.0;
};

/// ADD: mean vertex distance; ADI: mean distance to the closest transformed vertex.
inline AddAdi add_adi(std::span<const Vec3> vertices, const Pose& est, const Pose& gt) {
    if (vertices.empty()) throw PreconditionError("add_adi: no vertices");
    const std::size_t n = vertices.size();
    std::vector<Vec3> e(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
        e[i] = est.apply(vertices[i]);
        g[i] = gt.apply(vertices[i]);
    }
    std::vector<double> nearest(n);
    if (n <= 64) {
        for (std::size_t i = 0; i < n; ++i) {
            double m = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) m = std::min(m, (e[i] - g[j]).norm());
            nearest[i] = m;
        }
    } else {
        const auto box_lo = g.front();
        double extent = 0.0;
        for (const auto& p : g) extent = std::max(extent, (p - box_lo).norm());
        const double cell = std::max(extent / std::cbrt(static_cast<double>(n)), 1e-9);
        const PointGrid grid(g, cell);
        parallel_for(n, [&](std::size_t i) {
            const auto nn = grid.knn(e[i], 1);
            nearest[i] = std::sqrt(nn.front().squared_distance);
        });
    }
    AddAdi r;
    for (std::size_t i = 0; i < n; ++i) {
        r.add += (e[i] - g[i]).norm();
        r.adi += nearest[i];
    }
    r.add /= static_cast<double>(n);
    r.adi /= static_cast<double>(n);
    return r;
}

struct RotTransError {
    double re = 0.0;  // degrees
    double te = 0.0;  // mm
};

/// Rotation/translation error against the symmetry-equivalent ground truth
/// with the smallest rotation error (ties: smaller translation error).
inline RotTransError re_te(const Pose& est, const Pose& gt, std::span<const Pose> syms) {
    if (syms.empty()) throw PreconditionError("re_te: empty symmetry set");
    RotTransError best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (const auto& s : syms) {
        const Mat3 r_sym = gt.rotation * s.rotation;
        const Vec3 t_sym = gt.rotation * s.translation + gt.translation;
        const double re = rotation_angle_deg(est.rotation.transpose() * r_sym);
        const double te = (est.translation - t_sym).norm();
        if (re < best.re || (re == best.re && te < best.te)) best = {re, te};
    }
    return best;
}

/// Visibility of a rendered object against the test depth: rendered and
/// either no test depth there or not behind it by more than `delta`.
inline bool vsd_visible(float rendered, float test, double delta) {
    if (!(rendered > 0.0f)) return false;
    return test == 0.0f || static_cast<double>(rendered) - static_cast<double>(test) <= delta;
}

/// VSD errors for several tolerances tau at once (same masks for all).
inline std::vector<double> vsd_errors(const DepthMap& est_render, const DepthMap& gt_render,
                                      const DepthMap& test, std::span<const double> taus,
                                      double delta, bool annotated_visible = true) {
    if (!est_render.same_size(gt_render) || !est_render.same_size(test))
        throw PreconditionError("vsd: depth maps have different dimensions");
    if (!(delta > 0.0)) throw PreconditionError("vsd: delta must be > 0");
    for (double t : taus)
        if (!(t > 0.0)) throw PreconditionError("vsd: tau must be > 0");
    std::size_t union_count = 0;
    std::vector<std::size_t> inliers(taus.size(), 0);
    for (std::size_t i = 0; i < test.values.size(); ++i) {
        const bool ve = vsd_visible(est_render.values[i], test.values[i], delta);
        const bool vg = vsd_visible(gt_render.values[i], test.values[i], delta);
        if (!ve && !vg) continue;
        ++union_count;
        if (!(ve && vg)) continue;
        const double diff = std::abs(static_cast<double>(est_render.values[i]) -
                                     static_cast<double>(gt_render.values[i]));
        for (std::size_t t = 0; t < taus.size(); ++t)
            if (diff <= taus[t]) ++inliers[t];
    }
    std::vector<double> out(taus.size());
    for (std::size_t t = 0; t < taus.size(); ++t) {
        if (union_count == 0)
            out[t] = annotated_visible ? 1.0 : 0.0;
        else
            out[t] = static_cast<double>(union_count - inliers[t]) / static_cast<double>(union_count);
    }
    return out;
}

/// Fraction of pixels in the union of the visible footprints that are not in
/// the intersection or whose depths differ by more than `tau`.
inline double vsd(const DepthMap& est_render, const DepthMap& gt_render, const DepthMap& test,
                  double tau, double delta, bool annotated_visible = true) {
    const double taus[1] = {tau};
    return vsd_errors(est_render, gt_render, test, taus, delta, annotated_visible).front();
}

// ---------------------------------------------------------------------------
// Threshold grids and recall
// ---------------------------------------------------------------------------

struct BopGrid {
    /// VSD tau as a fraction of the object diameter.
    std::vector<double> vsd_taus_rel;
    std::vector<double> vsd_thresholds;
    /// MSSD thresholds as a fraction of the diameter.
    std::vector<double> mssd_thresholds;
    /// MSPD thresholds in pixels at 640 px image width.
    std::vector<double> mspd_thresholds;
    double vsd_delta = 15.0;      // mm
    double ad_threshold = 0.1;    // fraction of the diameter
    double re_threshold = 10.0;   // degrees
    double te_threshold = 10.0;   // mm

    /// The BOP19 protocol: 0.05..0.50 step 0.05 (VSD, MSSD), 5..50 step 5 (MSPD).
    static BopGrid bop19() {
        BopGrid g;
        for (int i = 1; i <= 10; ++i) {
            g.vsd_taus_rel.push_back(0.05 * i);
            g.vsd_thresholds.push_back(0.05 * i);
            g.mssd_thresholds.push_back(0.05 * i);
            g.mspd_thresholds.push_back(5.0 * i);
        }
        return g;
    }
};

struct PoseErrorReport {
    /// One VSD error per entry of BopGrid::vsd_taus_rel.
    std::vector<double> vsd_errors;
    double mssd = 0.0;  // mm
    double mspd = 0.0;  // px
    double add = 0.0;   // mm
    double adi = 0.0;   // mm
    double re = 0.0;    // degrees
    double te = 0.0;    // mm
    double diameter = 0.0;
    int image_width = 640;
    bool symmetric = false;
};

/// Per-target correctness over the grids. Fractions are correct cells / cells.
struct ReportScore {
    double vsd = 0.0;
    double mssd = 0.0;
    double mspd = 0.0;
    bool ad = false;
    bool re = false;
    bool te = false;
    std::vector<std::uint8_t> vsd_flags;   // [tau][theta] row-major
    std::vector<std::uint8_t> mssd_flags;
    std::vector<std::uint8_t> mspd_flags;
};

inline ReportScore score_report(const PoseErrorReport& r, const BopGrid& grid = BopGrid::bop19()) {
    if (!(r.diameter > 0.0)) throw PreconditionError("score_report: diameter must be > 0");
    if (r.vsd_errors.size() != grid.vsd_taus_rel.size())
        throw PreconditionError("score_report: report has " + std::to_string(r.vsd_errors.size()) +
                                " VSD errors, grid has " + std::to_string(grid.vsd_taus_rel.size()) +
                                " tolerances");
    ReportScore s;
    std::size_t ok = 0;
    for (double e : r.vsd_errors)
        for (double th : grid.vsd_thresholds) {
            const bool c = e < th;
            s.vsd_flags.push_back(c);
            ok += c;
        }
    s.vsd = s.vsd_flags.empty() ? 0.0 : static_cast<double>(ok) / s.vsd_flags.size();
    ok = 0;
    for (double th : grid.mssd_thresholds) {
        const bool c = r.mssd < th * r.diameter;
        s.mssd_flags.push_back(c);
        ok += c;
    }
    s.mssd = s.mssd_flags.empty() ? 0.0 : static_cast<double>(ok) / s.mssd_flags.size();
    ok = 0;
    const double px_scale = r.image_width / 640.0;
    for (double th : grid.mspd_thresholds) {
        const bool c = r.mspd < th * px_scale;
        s.mspd_flags.push_back(c);
        ok += c;
    }
    s.mspd = s.mspd_flags.empty() ? 0.0 : static_cast<double>(ok) / s.mspd_flags.size();
    s.ad = (r.symmetric ? r.adi : r.add) < grid.ad_threshold * r.diameter;
    s.re = r.re < grid.re_threshold;
    s.te = r.te < grid.te_threshold;
    return s;
}

inline double average_recall(double ar_vsd, double ar_mssd, double ar_mspd) {
    return (ar_vsd + ar_mssd + ar_mspd) / 3.0;
}

/// Recalls over a set of ground-truth targets. Unmatched targets count as
/// incorrect everywhere; mean raw errors cover matched targets only.
struct RecallSummary {
    std::size_t targets = 0;
    std::size_t matched = 0;
    double ar_vsd = 0.0;
    double ar_mssd = 0.0;
    double ar_mspd = 0.0;
    double ar = 0.0;
    double ad_recall = 0.0;
    double re_recall = 0.0;
    double te_recall = 0.0;
    std::optional<double> mean_vsd;   // at the smallest tau
    std::optional<double> mean_mssd;
    std::optional<double> mean_mspd;
    std::optional<double> mean_add;
    std::optional<double> mean_adi;
    std::optional<double> mean_re;
    std::optional<double> mean_te;
};

/// One target = one ground-truth instance; nullopt means no estimate matched it.
inline RecallSummary summarize(std::span<const std::optional<PoseErrorReport>> targets,
                               const BopGrid& grid = BopGrid::bop19()) {
    RecallSummary out;
    out.targets = targets.size();
    double vsd = 0, mssd = 0, mspd = 0, ad = 0, re = 0, te = 0;
    double m_vsd = 0, m_mssd = 0, m_mspd = 0, m_add = 0, m_adi = 0, m_re = 0, m_te = 0;
    for (const auto& t : targets) {
        if (!t) continue;
        ++out.matched;
        const ReportScore s = score_report(*t, grid);
        vsd += s.vsd;
        mssd += s.mssd;
        mspd += s.mspd;
        ad += s.ad;
        re += s.re;
        te += s.te;
        m_vsd += t->vsd_errors.empty() ? 0.0 : t->vsd_errors.front();
        m_mssd += t->mssd;
        m_mspd += t->mspd;
        m_add += t->add;
        m_adi += t->adi;
        m_re += t->re;
        m_te += t->te;
    }
    if (out.targets > 0) {
        const double n = static_cast<double>(out.targets);
        out.ar_vsd = vsd / n;
        out.ar_mssd = mssd / n;
        out.ar_mspd = mspd / n;
        out.ar = average_recall(out.ar_vsd, out.ar_mssd, out.ar_mspd);
        out.ad_recall = ad / n;
        out.re_recall = re / n;
        out.te_recall = te / n;
    }
    if (out.matched > 0) {
        const double m = static_cast<double>(out.matched);
        out.mean_vsd = m_vsd / m;
        out.mean_mssd = m_mssd / m;
        out.mean_mspd = m_mspd / m;
        out.mean_add = m_add / m;
        out.mean_adi = m_adi / m;
        out.mean_re = m_re / m;
        out.mean_te = m_te / m;
    }
    return out;
}

/// Recalls for reports of a single object (all targets matched).
inline RecallSummary recall_and_ar(std::span<const PoseErrorReport> reports, double diameter,
                                   int image_width, const BopGrid& grid = BopGrid::bop19()) {
    if (reports.empty()) throw PreconditionError("recall_and_ar: no reports");
    if (!(diameter > 0.0)) throw PreconditionError("recall_and_ar: diameter must be > 0");
    std::vector<std::optional<PoseErrorReport>> targets;
    targets.reserve(reports.size());
    for (auto r : reports) {
        r.diameter = diameter;
        r.image_width = image_width;
        targets.emplace_back(std::move(r));
    }
    return summarize(targets, grid);
}

// ---------------------------------------------------------------------------
// Full evaluation of one estimate
// ---------------------------------------------------------------------------

struct ObjectModel {
    const TriMesh* mesh = nullptr;
    double diameter = 0.0;
    /// Expanded symmetry transforms, identity included.
    std::vector<Pose> symmetries{Pose::identity()};
};

/// Computes every metric for one (estimate, ground truth) pair. VSD renders
/// both poses; `depth_test` defaults to the ground-truth render.
inline PoseErrorReport evaluate_pose(const ObjectModel& model, const Pose& est, const Pose& gt,
                                     const CameraIntrinsics& k, const BopGrid& grid = BopGrid::bop19(),
                                     const DepthMap* depth_test = nullptr) {
    if (!model.mesh) throw PreconditionError("evaluate_pose: no mesh");
    const auto& verts = model.mesh->vertices;
    PoseErrorReport r;
    r.diameter = model.diameter;
    r.image_width = k.width;
    r.symmetric = model.symmetries.size() > 1;
    r.mssd = mssd(verts, est, gt, model.symmetries);
    r.mspd = mspd(verts, est, gt, model.symmetries, k);
    const auto a = add_adi(verts, est, gt);
    r.add = a.add;
    r.adi = a.adi;
    const auto rt = re_te(est, gt, model.symmetries);
    r.re = rt.re;
    r.te = rt.te;
    const DepthMap est_render = rasterize_depth(*model.mesh, est, k);
    const DepthMap gt_render = rasterize_depth(*model.mesh, gt, k);
    std::vector<double> taus;
    for (double t : grid.vsd_taus_rel) taus.push_back(t * model.diameter);
    r.vsd_errors = vsd_errors(est_render, gt_render, depth_test ? *depth_test : gt_render, taus,
                              grid.vsd_delta);
    return r;
}

}  // namespace posekit
