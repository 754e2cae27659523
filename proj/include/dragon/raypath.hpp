#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dragon/errors.hpp"
#include "dragon/geo.hpp"
#include "dragon/geometry.hpp"

namespace dragon {

/// Parametric interval [start, end] along a segment, in meters or in [0, 1].
struct Interval {
    double start = 0.0;
    double end = 0.0;
    double length() const { return end - start; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Direct-path obstruction summary. Intervals are measured in meters along the
/// slant path starting at the transmitter.
struct PathProfile {
    double d_2d = 0.0;
    double d_3d = 0.0;
    int n_obs = 0;
    double d_obs = 0.0;
    int n_ter = 0;
    double d_ter = 0.0;
    std::vector<Interval> building_intervals;
    std::vector<Interval> terrain_intervals;
};

inline bool is_los(const PathProfile& p) { return p.n_obs == 0 && p.n_ter == 0; }

inline constexpr double kMinIntervalM = 1e-6;

namespace detail {

/// Sorts and unions intervals whose gap is below `join_gap`.
inline std::vector<Interval> merge_intervals(std::vector<Interval> v, double join_gap) {
    std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.start < b.start; });
    std::vector<Interval> out;
    for (const auto& iv : v) {
        if (!out.empty() && iv.start <= out.back().end + join_gap)
            out.back().end = std::max(out.back().end, iv.end);
        else
            out.push_back(iv);
    }
    return out;
}

inline double sum_lengths(const std::vector<Interval>& v) {
    double s = 0.0;
    for (const auto& iv : v) s += iv.length();
    return s;
}

}  // namespace detail

/// Parametric sub-intervals of p0->p1 strictly inside the building prism.
/// Contacts with zero penetration (grazing faces, edges, the roof plane) are excluded.
inline std::vector<Interval> segment_prism_intersection(const LocalPoint& p0, const LocalPoint& p1, const Building& b) {
    const double dx = p1.x - p0.x, dy = p1.y - p0.y, dz = p1.z - p0.z;
    const double seg_len = std::sqrt(dx * dx + dy * dy + dz * dz);
    if (seg_len == 0.0) return {};

    // z-range where base < z(t) < top
    double tz0 = 0.0, tz1 = 1.0;
    const double base = b.base_z_m, top = b.top_z();
    if (dz == 0.0) {
        if (!(p0.z > base && p0.z < top)) return {};
    } else {
        double ta = (base - p0.z) / dz, tb = (top - p0.z) / dz;
        if (ta > tb) std::swap(ta, tb);
        tz0 = std::max(0.0, ta);
        tz1 = std::min(1.0, tb);
        if (!(tz1 > tz0)) return {};
    }

    const Vec2 a{p0.x, p0.y}, d{dx, dy};
    const auto& ring = b.footprint;
    std::vector<Interval> inside;
    if (norm(d) < 1e-12 * (1.0 + norm(a))) {
        if (point_in_polygon_strict(a, ring)) inside.push_back({0.0, 1.0});
    } else {
        std::vector<double> ts{0.0, 1.0};
        for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
            const Vec2 q = ring[i], e = ring[(i + 1) % n] - ring[i];
            const double denom = cross(d, e);
            if (denom == 0.0) continue;
            const Vec2 w = q - a;
            const double t = cross(w, e) / denom;
            const double s = cross(w, d) / denom;
            if (s >= -1e-12 && s <= 1.0 + 1e-12 && t > 0.0 && t < 1.0) ts.push_back(t);
        }
        std::sort(ts.begin(), ts.end());
        for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
            const double t0 = ts[i], t1 = ts[i + 1];
            if (!(t1 > t0)) continue;
            const double tm = 0.5 * (t0 + t1);
            if (point_in_polygon_strict(a + tm * d, ring)) {
                if (!inside.empty() && inside.back().end == t0)
                    inside.back().end = t1;
                else
                    inside.push_back({t0, t1});
            }
        }
    }

    std::vector<Interval> out;
    for (const auto& iv : inside) {
        const double s = std::max(iv.start, tz0), e = std::min(iv.end, tz1);
        if ((e - s) * seg_len > kMinIntervalM) out.push_back({s, e});
    }
    return out;
}

namespace detail {

/// Maximal runs of the segment strictly below the bilinear terrain surface, as
/// parametric intervals. Along a straight segment the terrain is quadratic in t
/// within each patch between cell-center lines, so roots are solved exactly there.
inline std::vector<Interval> terrain_runs(const TerrainGrid& t, const LocalPoint& p0, const LocalPoint& p1) {
    const double dx = p1.x - p0.x, dy = p1.y - p0.y, dz = p1.z - p0.z;
    auto point_at = [&](double s) { return Vec2{p0.x + s * dx, p0.y + s * dy}; };
    auto gap = [&](double s) {
        const Vec2 p = point_at(s);
        return p0.z + s * dz - terrain_elevation(t, p.x, p.y);
    };

    std::vector<double> breaks{0.0, 1.0};
    auto add_line_crossings = [&](double origin, double start, double delta, int n) {
        if (delta == 0.0) return;
        for (int i = 0; i < n; ++i) {
            const double line = origin + (i + 0.5) * t.cell_size_m;
            const double s = (line - start) / delta;
            if (s > 0.0 && s < 1.0) breaks.push_back(s);
        }
    };
    add_line_crossings(t.origin.x, p0.x, dx, t.cols);
    add_line_crossings(t.origin.y, p0.y, dy, t.rows);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    std::vector<double> cuts = breaks;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const double s0 = breaks[i], s1 = breaks[i + 1];
        const double h = s1 - s0;
        if (!(h > 0.0)) continue;
        // quadratic through three samples, local coordinate u in [0, 1]
        const double g0 = gap(s0), gm = gap(s0 + 0.5 * h), g1 = gap(s1);
        const double qa = 2.0 * g0 - 4.0 * gm + 2.0 * g1;
        const double qb = -3.0 * g0 + 4.0 * gm - g1;
        const double qc = g0;
        auto push_root = [&](double u) {
            if (u > 0.0 && u < 1.0) cuts.push_back(s0 + u * h);
        };
        const double scale = std::abs(qa) + std::abs(qb) + std::abs(qc);
        if (std::abs(qa) <= 1e-12 * scale) {
            if (qb != 0.0) push_root(-qc / qb);
        } else {
            const double disc = qb * qb - 4.0 * qa * qc;
            if (disc >= 0.0) {
                const double sq = std::sqrt(disc);
                const double q = -0.5 * (qb + std::copysign(sq, qb));
                if (q != 0.0) {
                    push_root(q / qa);
                    push_root(qc / q);
                } else {
                    push_root(-qb / (2.0 * qa));
                }
            }
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    std::vector<Interval> runs;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double s0 = cuts[i], s1 = cuts[i + 1];
        if (!(s1 > s0)) continue;
        if (gap(0.5 * (s0 + s1)) < 0.0) {
            if (!runs.empty() && runs.back().end == s0)
                runs.back().end = s1;
            else
                runs.push_back({s0, s1});
        }
    }
    return runs;
}

}  // namespace detail

/// Direct-path obstruction profile from tx to rx.
inline PathProfile trace(const Scenario& s, const LocalPoint& tx, const LocalPoint& rx) {
    const double dx = rx.x - tx.x, dy = rx.y - tx.y, dz = rx.z - tx.z;
    PathProfile p;
    p.d_2d = std::hypot(dx, dy);
    p.d_3d = std::sqrt(dx * dx + dy * dy + dz * dz);
    if (!(p.d_3d > 1e-9)) throw DegenerateError("transmitter and receiver coincide");
    const Rect& box = s.bbox();
    const double tol = 1e-6 * (1.0 + std::max(std::abs(box.x_max), std::abs(box.y_max)));
    if (!box.contains(tx.x, tx.y, tol) || !box.contains(rx.x, rx.y, tol))
        throw OutOfBoundsError("path endpoints must lie inside the scenario bounding box");

    const Rect seg_box = bounds_of(std::vector<Vec2>{tx.xy(), rx.xy()});
    std::vector<Interval> hits;
    for (const auto& b : s.buildings()) {
        if (!b.bounds().overlaps(seg_box)) continue;
        for (const auto& iv : segment_prism_intersection(tx, rx, b))
            hits.push_back({iv.start * p.d_3d, iv.end * p.d_3d});
    }
    p.building_intervals = detail::merge_intervals(std::move(hits), kMinIntervalM);
    p.n_obs = static_cast<int>(p.building_intervals.size());
    p.d_obs = detail::sum_lengths(p.building_intervals);

    for (const auto& iv : detail::terrain_runs(s.terrain(), tx, rx)) {
        const Interval m{iv.start * p.d_3d, iv.end * p.d_3d};
        if (m.length() > kMinIntervalM) p.terrain_intervals.push_back(m);
    }
    p.n_ter = static_cast<int>(p.terrain_intervals.size());
    p.d_ter = detail::sum_lengths(p.terrain_intervals);
    return p;
}

}  // namespace dragon
