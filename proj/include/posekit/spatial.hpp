#pragma once

// Exact fixed-radius and k-nearest-neighbor queries over a uniform grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "posekit/core.hpp"

namespace posekit {

struct Neighbor {
    std::size_t index;
    double squared_distance;
};

class PointGrid {
public:
    /// `cell_size` > 0; queries stay exact for any value, it only affects speed.
    PointGrid(std::span<const Vec3> points, double cell_size)
        : points_(points.begin(), points.end()), cell_(cell_size) {
        if (!(cell_size > 0.0) || !std::isfinite(cell_size))
            throw PreconditionError("PointGrid: cell size must be positive");
        if (points_.empty()) return;
        lo_ = hi_ = cell_of(points_[0]);
        std::vector<std::pair<Key, std::size_t>> keyed(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) {
            const Cell c = cell_of(points_[i]);
            for (int a = 0; a < 3; ++a) {
                lo_[a] = std::min(lo_[a], c[a]);
                hi_[a] = std::max(hi_[a], c[a]);
            }
            keyed[i] = {key(c), i};
        }
        std::sort(keyed.begin(), keyed.end());
        order_.resize(keyed.size());
        for (std::size_t i = 0; i < keyed.size(); ++i) {
            order_[i] = keyed[i].second;
            auto [it, inserted] = ranges_.try_emplace(keyed[i].first, Range{i, i + 1});
            if (!inserted) it->second.end = i + 1;
        }
    }

    std::size_t size() const { return points_.size(); }
    const Vec3& point(std::size_t i) const { return points_[i]; }

    /// Number of points within `radius` of q (inclusive), q itself counted if present.
    std::size_t count_within(const Vec3& q, double radius) const {
        std::size_t n = 0;
        visit_within(q, radius, [&](std::size_t, double) { ++n; });
        return n;
    }

    /// Points within `radius` of q, sorted by (distance, index).
    std::vector<Neighbor> radius_search(const Vec3& q, double radius) const {
        std::vector<Neighbor> out;
        visit_within(q, radius, [&](std::size_t i, double d2) { out.push_back({i, d2}); });
        std::sort(out.begin(), out.end(), less);
        return out;
    }

    /// The k nearest points to q, sorted by (distance, index), skipping index
    /// `exclude`. Points at the same distance as the k-th neighbor (relative
    /// tolerance 1e-9 on squared distance) are all returned, so the result
    /// does not depend on input order.
    std::vector<Neighbor> knn(const Vec3& q, std::size_t k,
                              std::size_t exclude = std::numeric_limits<std::size_t>::max()) const {
        std::vector<Neighbor> found;
        if (k == 0 || points_.empty()) return found;
        const Cell c0 = cell_of(q);
        const int max_ring = max_ring_from(c0);
        for (int ring = 0; ring <= max_ring; ++ring) {
            visit_shell(c0, ring, [&](std::size_t i) {
                if (i == exclude) return;
                found.push_back({i, (points_[i] - q).squared_norm()});
            });
            if (found.size() < k) continue;
            std::nth_element(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k - 1),
                             found.end(), less);
            const double kth = found[k - 1].squared_distance;
            // unvisited points are at least ring * cell away
            const double safe = static_cast<double>(ring) * cell_;
            if (kth * (1.0 + 1e-9) < safe * safe) break;
        }
        std::sort(found.begin(), found.end(), less);
        if (found.size() > k) {
            const double limit = found[k - 1].squared_distance * (1.0 + 1e-9);
            std::size_t keep = k;
            while (keep < found.size() && found[keep].squared_distance <= limit) ++keep;
            found.resize(keep);
        }
        return found;
    }

private:
    using Cell = std::array<std::int64_t, 3>;
    using Key = std::uint64_t;
    struct Range {
        std::size_t begin;
        std::size_t end;
    };

    static bool less(const Neighbor& a, const Neighbor& b) {
        return a.squared_distance < b.squared_distance ||
               (a.squared_distance == b.squared_distance && a.index < b.index);
    }

    Cell cell_of(const Vec3& p) const {
        return {static_cast<std::int64_t>(std::floor(p.x / cell_)),
                static_cast<std::int64_t>(std::floor(p.y / cell_)),
                static_cast<std::int64_t>(std::floor(p.z / cell_))};
    }
    static Key key(const Cell& c) {
        auto mix = [](std::int64_t v) { return static_cast<std::uint64_t>(v) & 0x1FFFFFULL; };
        return (mix(c[0]) << 42) | (mix(c[1]) << 21) | mix(c[2]);
    }

    int max_ring_from(const Cell& c) const {
        std::int64_t r = 0;
        for (int a = 0; a < 3; ++a) r = std::max({r, c[a] - lo_[a], hi_[a] - c[a]});
        return static_cast<int>(std::min<std::int64_t>(r, 1 << 20));
    }

    template <typename Fn>
    void visit_cell(const Cell& c, Fn&& fn) const {
        for (int a = 0; a < 3; ++a)
            if (c[a] < lo_[a] || c[a] > hi_[a]) return;
        auto it = ranges_.find(key(c));
        if (it == ranges_.end()) return;
        for (std::size_t j = it->second.begin; j < it->second.end; ++j) {
            const std::size_t i = order_[j];
            // keys wrap at 2^21 cells per axis; confirm the true cell
            if (cell_of(points_[i]) == c) fn(i);
        }
    }

    /// Cells whose Chebyshev distance from c0 is exactly `ring`.
    template <typename Fn>
    void visit_shell(const Cell& c0, int ring, Fn&& fn) const {
        for (std::int64_t dx = -ring; dx <= ring; ++dx)
            for (std::int64_t dy = -ring; dy <= ring; ++dy) {
                const bool edge = std::abs(dx) == ring || std::abs(dy) == ring;
                const std::int64_t step = edge ? 1 : 2 * ring;
                for (std::int64_t dz = -ring; dz <= ring; dz += (step == 0 ? 1 : step))
                    visit_cell({c0[0] + dx, c0[1] + dy, c0[2] + dz}, fn);
            }
    }

    template <typename Fn>
    void visit_within(const Vec3& q, double radius, Fn&& fn) const {
        if (points_.empty() || radius < 0.0) return;
        const double r2 = radius * radius;
        const Cell c0 = cell_of(q);
        const auto reach = static_cast<std::int64_t>(std::ceil(radius / cell_));
        for (std::int64_t dx = -reach; dx <= reach; ++dx)
            for (std::int64_t dy = -reach; dy <= reach; ++dy)
                for (std::int64_t dz = -reach; dz <= reach; ++dz)
                    visit_cell({c0[0] + dx, c0[1] + dy, c0[2] + dz}, [&](std::size_t i) {
                        const double d2 = (points_[i] - q).squared_norm();
                        if (d2 <= r2) fn(i, d2);
                    });
    }

    std::vector<Vec3> points_;
    double cell_;
    Cell lo_{0, 0, 0};
    Cell hi_{0, 0, 0};
    std::vector<std::size_t> order_;
    std::unordered_map<Key, Range> ranges_;
};

}  // namespace posekit
