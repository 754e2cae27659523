#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dragon/errors.hpp"
#include "dragon/geo.hpp"
#include "dragon/geometry.hpp"
#include "dragon/io/pgm.hpp"

namespace dragon {

inline constexpr int kImageSize = 64;
inline constexpr double kTopViewSpanM = 300.0;
inline constexpr double kSideViewSpanM = 150.0;

inline constexpr float kBackground = 1.0f;
inline constexpr float kTerrainShade = 0.5f;
inline constexpr float kBuildingShade = 0.0f;

/// 64 x 64 single-channel image, row-major, row 0 at the top.
struct GrayImage {
    std::vector<float> pixels = std::vector<float>(kImageSize * kImageSize, kBackground);

    float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * kImageSize + c]; }
    float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * kImageSize + c]; }
    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

inline void validate(const GrayImage& img) {
    if (img.pixels.size() != static_cast<std::size_t>(kImageSize * kImageSize))
        throw ShapeError("image must be 64 x 64");
    for (float v : img.pixels)
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image intensity outside [0, 1]");
}

struct ImagePair {
    GrayImage top;
    GrayImage side;
    friend bool operator==(const ImagePair&, const ImagePair&) = default;
};

/// Top image stacked over the side image: 128 rows x 64 columns.
struct IntensityGrid {
    int rows = 2 * kImageSize;
    int cols = kImageSize;
    std::vector<float> values;

    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

inline IntensityGrid concat_vertical(const ImagePair& pair) {
    IntensityGrid g;
    g.values.reserve(static_cast<std::size_t>(g.rows) * g.cols);
    g.values.insert(g.values.end(), pair.top.pixels.begin(), pair.top.pixels.end());
    g.values.insert(g.values.end(), pair.side.pixels.begin(), pair.side.pixels.end());
    return g;
}

namespace detail {

/// Unit rx->tx bearing in the horizontal plane; due east when tx is straight above or below rx.
inline Vec2 bearing(const LocalPoint& rx, const LocalPoint& tx) {
    if (rx == tx) throw DegenerateError("receiver and transmitter coincide; bearing undefined");
    const Vec2 d = tx.xy() - rx.xy();
    const double n = norm(d);
    if (n < 1e-9) return {1.0, 0.0};
    return (1.0 / n) * d;
}

}  // namespace detail

/// Orthographic 300 m x 300 m top view centered at rx, rotated so the bearing
/// towards tx points along +column. Pixel-center sampling of building footprints.
inline GrayImage render_top(const Scenario& s, const LocalPoint& rx, const LocalPoint& tx) {
    const Vec2 fwd = detail::bearing(rx, tx);
    const Vec2 left{-fwd.y, fwd.x};
    const double px = kTopViewSpanM / kImageSize;
    const double half = 0.5 * kTopViewSpanM;
    GrayImage img;
    std::vector<Vec2> local;
    for (const auto& b : s.buildings()) {
        local.clear();
        for (const auto& v : b.footprint) {
            const Vec2 r = v - rx.xy();
            local.push_back({dot(r, fwd), dot(r, left)});
        }
        const Rect box = bounds_of(local);
        if (box.x_max < -half || box.x_min > half || box.y_max < -half || box.y_min > half) continue;
        const int c_lo = std::max(0, static_cast<int>(std::floor((box.x_min + half) / px - 0.5)));
        const int c_hi = std::min(kImageSize - 1, static_cast<int>(std::ceil((box.x_max + half) / px - 0.5)));
        const int r_lo = std::max(0, static_cast<int>(std::floor((half - box.y_max) / px - 0.5)));
        const int r_hi = std::min(kImageSize - 1, static_cast<int>(std::ceil((half - box.y_min) / px - 0.5)));
        for (int r = r_lo; r <= r_hi; ++r) {
            const double w = half - (r + 0.5) * px;
            for (int c = c_lo; c <= c_hi; ++c) {
                if (img.at(r, c) == kBuildingShade) continue;
                const double u = (c + 0.5) * px - half;
                if (point_in_polygon_strict({u, w}, local)) img.at(r, c) = kBuildingShade;
            }
        }
    }
    return img;
}

/// Vertical slice along the direct path. Columns map [0, d_2d] from rx (left) to
/// tx (right); rows span 150 m centered on the receiver height. Buildings 0.0,
/// below-terrain 0.5, free space 1.0.
inline GrayImage render_side(const Scenario& s, const LocalPoint& rx, const LocalPoint& tx) {
    const Vec2 dir = detail::bearing(rx, tx);
    const double d2 = norm(tx.xy() - rx.xy());
    const double row_h = kSideViewSpanM / kImageSize;
    const double top_z = rx.z + 0.5 * kSideViewSpanM;
    GrayImage img;
    const Rect box = s.bbox();
    for (int c = 0; c < kImageSize; ++c) {
        const double h = (c + 0.5) / kImageSize * d2;
        const Vec2 p = rx.xy() + h * dir;
        const double ground = box.contains(p.x, p.y, 1e-6) ? s.ground_z(p.x, p.y) : -1e300;
        std::vector<std::pair<double, double>> solids;
        for (const auto& b : s.buildings()) {
            const Rect bb = b.bounds();
            if (!bb.contains(p.x, p.y)) continue;
            if (point_in_polygon_strict(p, b.footprint)) solids.emplace_back(b.base_z_m, b.top_z());
        }
        for (int r = 0; r < kImageSize; ++r) {
            const double z = top_z - (r + 0.5) * row_h;
            float v = kBackground;
            for (const auto& [lo, hi] : solids)
                if (z > lo && z < hi) {
                    v = kBuildingShade;
                    break;
                }
            if (v != kBuildingShade && z < ground) v = kTerrainShade;
            img.at(r, c) = v;
        }
    }
    return img;
}

inline ImagePair render_pair(const Scenario& s, const LocalPoint& rx, const LocalPoint& tx) {
    return {render_top(s, rx, tx), render_side(s, rx, tx)};
}

/// PGM debug export, intensity byte = round(pixel * 255).
inline std::string to_pgm(const GrayImage& img) {
    std::vector<unsigned char> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = io::unit_to_byte(img.pixels[i]);
    return io::encode_pgm(kImageSize, kImageSize, bytes);
}

inline std::string to_pgm(const IntensityGrid& g) {
    std::vector<unsigned char> bytes(g.values.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = io::unit_to_byte(g.values[i]);
    return io::encode_pgm(g.cols, g.rows, bytes);
}

}  // namespace dragon
