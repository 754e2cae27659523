#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace dragon {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend constexpr bool operator==(Vec2, Vec2) = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

/// Axis-aligned rectangle in the local metric frame.
struct Rect {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    bool contains(double x, double y, double tol = 0.0) const {
        return x >= x_min - tol && x <= x_max + tol && y >= y_min - tol && y <= y_max + tol;
    }
    bool overlaps(const Rect& o) const {
        return x_min <= o.x_max && o.x_min <= x_max && y_min <= o.y_max && o.y_min <= y_max;
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

inline Rect bounds_of(std::span<const Vec2> pts) {
    Rect r{pts.front().x, pts.front().y, pts.front().x, pts.front().y};
    for (const auto& p : pts) {
        r.x_min = std::min(r.x_min, p.x);
        r.y_min = std::min(r.y_min, p.y);
        r.x_max = std::max(r.x_max, p.x);
        r.y_max = std::max(r.y_max, p.y);
    }
    return r;
}

/// Shoelace area; positive for counter-clockwise rings.
inline double signed_area(std::span<const Vec2> ring) {
    double a = 0.0;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) a += cross(ring[i], ring[(i + 1) % n]);
    return 0.5 * a;
}

inline Vec2 centroid(std::span<const Vec2> ring) {
    const double a = signed_area(ring);
    if (std::abs(a) < 1e-12) {
        Vec2 c;
        for (const auto& p : ring) c = c + p;
        return (1.0 / static_cast<double>(ring.size())) * c;
    }
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const Vec2 p = ring[i], q = ring[(i + 1) % n];
        const double w = cross(p, q);
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    return {cx / (6.0 * a), cy / (6.0 * a)};
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - (a + t * ab));
}

/// Closed-segment intersection test, collinear overlaps included.
inline bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
    auto orient = [](Vec2 a, Vec2 b, Vec2 c) {
        const double v = cross(b - a, c - a);
        return (v > 0.0) - (v < 0.0);
    };
    auto on_segment = [](Vec2 a, Vec2 b, Vec2 c) {
        return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
               c.y <= std::max(a.y, b.y);
    };
    const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2);
    const int o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(p1, p2, q1)) return true;
    if (o2 == 0 && on_segment(p1, p2, q2)) return true;
    if (o3 == 0 && on_segment(q1, q2, p1)) return true;
    if (o4 == 0 && on_segment(q1, q2, p2)) return true;
    return false;
}

/// A ring is simple when no two non-adjacent edges touch.
inline bool is_simple_ring(std::span<const Vec2> ring) {
    const std::size_t n = ring.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        if (ring[i] == ring[(i + 1) % n]) return false;
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if (adjacent) continue;
            if (segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])) return false;
        }
    }
    return true;
}

/// Strict interior test: points within a relative tolerance of the boundary are outside.
inline bool point_in_polygon_strict(Vec2 p, std::span<const Vec2> ring, double rel_tol = 1e-9) {
    const std::size_t n = ring.size();
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2 a = ring[j], b = ring[i];
        const double scale = 1.0 + std::max({std::abs(a.x), std::abs(a.y), std::abs(b.x), std::abs(b.y)});
        if (point_segment_distance(p, a, b) <= rel_tol * scale) return false;
        if ((b.y > p.y) != (a.y > p.y)) {
            const double x_cross = b.x + (p.y - b.y) * (a.x - b.x) / (a.y - b.y);
            if (p.x < x_cross) inside = !inside;
        }
    }
    return inside;
}

}  // namespace dragon
