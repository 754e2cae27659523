#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dragon/errors.hpp"
#include "dragon/geometry.hpp"

namespace dragon {

// WGS84 semi-major axis; one degree of arc on it is ~111 319.49 m.
inline constexpr double kEarthRadiusM = 6378137.0;
inline constexpr double kMetersPerDegree = kEarthRadiusM * std::numbers::pi / 180.0;

inline constexpr double kDefaultBuildingHeightM = 8.0;
inline constexpr double kDefaultReceiverHeightM = 1.5;
inline constexpr double kDefaultTerrainCellM = 25.0;

struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;
    double alt_m = 0.0;
};

inline void validate(const GeoPoint& p) {
    if (!(p.lat >= -90.0 && p.lat <= 90.0)) throw ValidationError("latitude out of [-90, 90]: " + std::to_string(p.lat));
    if (!(p.lon >= -180.0 && p.lon <= 180.0))
        throw ValidationError("longitude out of [-180, 180]: " + std::to_string(p.lon));
}

/// Equirectangular tangent-plane projection around (lat0, lon0).
struct Projection {
    double lat0 = 0.0;
    double lon0 = 0.0;
    double m_per_deg_lat = kMetersPerDegree;
    double m_per_deg_lon = kMetersPerDegree;

    static Projection around(double lat0, double lon0) {
        validate(GeoPoint{lat0, lon0, 0.0});
        return {lat0, lon0, kMetersPerDegree, kMetersPerDegree * std::cos(lat0 * std::numbers::pi / 180.0)};
    }
    friend bool operator==(const Projection&, const Projection&) = default;
};

/// Meters east / north of the projection origin, z above sea level.
struct LocalPoint {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec2 xy() const { return {x, y}; }
    friend bool operator==(const LocalPoint&, const LocalPoint&) = default;
};

/// z is passed through unchanged; the caller resolves the altitude frame.
inline LocalPoint project(const GeoPoint& p, const Projection& proj) {
    return {(p.lon - proj.lon0) * proj.m_per_deg_lon, (p.lat - proj.lat0) * proj.m_per_deg_lat, p.alt_m};
}

inline GeoPoint unproject(const LocalPoint& p, const Projection& proj) {
    return {proj.lat0 + p.y / proj.m_per_deg_lat, proj.lon0 + p.x / proj.m_per_deg_lon, p.z};
}

enum class HeightSource { annotated, calibrated, fallback };

inline std::string_view to_string(HeightSource s) {
    switch (s) {
        case HeightSource::annotated: return "annotated";
        case HeightSource::calibrated: return "calibrated";
        case HeightSource::fallback: return "default";
    }
    return "default";
}

inline HeightSource height_source_from(std::string_view s) {
    if (s == "annotated") return HeightSource::annotated;
    if (s == "calibrated") return HeightSource::calibrated;
    if (s == "default") return HeightSource::fallback;
    throw ParseError("unknown height_source '" + std::string(s) + "'");
}

/// Vertical prism: footprint extruded from base_z_m (terrain at the centroid) by height_m.
struct Building {
    std::string id;
    std::vector<Vec2> footprint;
    double height_m = kDefaultBuildingHeightM;
    HeightSource height_source = HeightSource::fallback;
    double base_z_m = 0.0;

    Rect bounds() const { return bounds_of(footprint); }
    double top_z() const { return base_z_m + height_m; }
    friend bool operator==(const Building&, const Building&) = default;
};

/// Drops a repeated closing vertex and reorients clockwise rings.
inline std::vector<Vec2> normalize_ring(std::vector<Vec2> ring) {
    if (ring.size() >= 2 && ring.front() == ring.back()) ring.pop_back();
    if (ring.size() >= 3 && signed_area(ring) < 0.0) std::reverse(ring.begin(), ring.end());
    return ring;
}

inline void validate(const Building& b) {
    if (b.footprint.size() < 3)
        throw ValidationError("building '" + b.id + "' footprint has " + std::to_string(b.footprint.size()) +
                              " vertices (need >= 3)");
    if (!is_simple_ring(b.footprint)) throw ValidationError("building '" + b.id + "' footprint is not simple");
    if (!(signed_area(b.footprint) > 0.0))
        throw ValidationError("building '" + b.id + "' footprint is not counter-clockwise");
    if (!(b.height_m > 0.0) || !std::isfinite(b.height_m))
        throw ValidationError("building '" + b.id + "' height must be > 0");
}

/// Regular raster with row 0 at the southern edge. Cell (r, c) is centered at
/// origin + ((c + 0.5) * cell, (r + 0.5) * cell).
struct TerrainGrid {
    LocalPoint origin;
    double cell_size_m = kDefaultTerrainCellM;
    int rows = 0;
    int cols = 0;
    std::vector<double> elevation;

    double at(int r, int c) const { return elevation[static_cast<std::size_t>(r) * cols + c]; }
    double& at(int r, int c) { return elevation[static_cast<std::size_t>(r) * cols + c]; }
    Vec2 cell_center(int r, int c) const {
        return {origin.x + (c + 0.5) * cell_size_m, origin.y + (r + 0.5) * cell_size_m};
    }
    Rect extent() const {
        return {origin.x, origin.y, origin.x + cols * cell_size_m, origin.y + rows * cell_size_m};
    }
    friend bool operator==(const TerrainGrid&, const TerrainGrid&) = default;

    static TerrainGrid flat(Rect area, double z, double cell = kDefaultTerrainCellM) {
        TerrainGrid g;
        g.origin = {area.x_min, area.y_min, 0.0};
        g.cell_size_m = cell;
        g.cols = std::max(1, static_cast<int>(std::ceil(area.width() / cell - 1e-9)));
        g.rows = std::max(1, static_cast<int>(std::ceil(area.height() / cell - 1e-9)));
        g.elevation.assign(static_cast<std::size_t>(g.rows) * g.cols, z);
        return g;
    }
};

inline void validate(const TerrainGrid& t, bool require_finite = true) {
    if (!(t.cell_size_m > 0.0)) throw ValidationError("terrain cell size must be > 0");
    if (t.rows < 1 || t.cols < 1) throw ValidationError("terrain grid must have at least one cell");
    if (t.elevation.size() != static_cast<std::size_t>(t.rows) * t.cols)
        throw ValidationError("terrain grid value count does not match rows x cols");
    if (require_finite)
        for (double v : t.elevation)
            if (!std::isfinite(v)) throw ValidationError("terrain grid contains non-finite elevation");
}

/// Bilinear interpolation between cell centers; constant extrapolation in the
/// half-cell rim so the whole grid rectangle is queryable.
inline double terrain_elevation(const TerrainGrid& t, double x, double y) {
    const Rect e = t.extent();
    const double tol = 1e-9 * (1.0 + std::max(std::abs(e.x_max), std::abs(e.y_max)));
    if (!e.contains(x, y, tol))
        throw OutOfBoundsError("terrain query (" + std::to_string(x) + ", " + std::to_string(y) +
                               ") outside grid extent");
    auto axis = [](double v, double origin, double cell, int n, int& i0, double& w) {
        double f = (v - origin) / cell - 0.5;
        f = std::clamp(f, 0.0, static_cast<double>(n - 1));
        i0 = std::min(static_cast<int>(std::floor(f)), std::max(0, n - 2));
        w = f - i0;
    };
    int c0, r0;
    double wx, wy;
    axis(x, t.origin.x, t.cell_size_m, t.cols, c0, wx);
    axis(y, t.origin.y, t.cell_size_m, t.rows, r0, wy);
    const int c1 = std::min(c0 + 1, t.cols - 1);
    const int r1 = std::min(r0 + 1, t.rows - 1);
    const double south = t.at(r0, c0) + wx * (t.at(r0, c1) - t.at(r0, c0));
    const double north = t.at(r1, c0) + wx * (t.at(r1, c1) - t.at(r1, c0));
    return south + wy * (north - south);
}

inline constexpr double kSupportedBandwidthsMhz[] = {1.4, 3.0, 5.0, 10.0, 15.0, 20.0};

struct Cell {
    std::string id;
    std::string mno;
    LocalPoint position;  // z = antenna height above sea level
    double antenna_height_m = 0.0;
    double freq_mhz = 0.0;
    double bandwidth_mhz = 20.0;
    std::optional<double> eirp_dbm;
    friend bool operator==(const Cell&, const Cell&) = default;
};

inline void validate(const Cell& c) {
    if (!(c.freq_mhz > 0.0)) throw ValidationError("cell '" + c.id + "' frequency must be > 0");
    const bool supported = std::any_of(std::begin(kSupportedBandwidthsMhz), std::end(kSupportedBandwidthsMhz),
                                       [&](double b) { return std::abs(b - c.bandwidth_mhz) < 1e-9; });
    if (!supported)
        throw ValidationError("cell '" + c.id + "' bandwidth " + std::to_string(c.bandwidth_mhz) +
                              " MHz is not an LTE channel bandwidth");
}

inline constexpr double kMinPlausibleRsrp = -160.0;
inline constexpr double kMaxPlausibleRsrp = -30.0;

struct Measurement {
    LocalPoint position;  // z above sea level
    std::string cell_id;
    double rsrp_dbm = 0.0;
};

inline void validate(const Measurement& m) {
    if (!(m.rsrp_dbm >= kMinPlausibleRsrp && m.rsrp_dbm <= kMaxPlausibleRsrp))
        throw ValidationError("RSRP " + std::to_string(m.rsrp_dbm) + " dBm outside plausible range [-160, -30]");
}

/// Immutable three-dimensional propagation environment in a local metric frame.
class Scenario {
public:
    Scenario() = default;

    /// Validates every invariant and resolves building base elevations from the terrain.
    static Scenario create(Projection projection, Rect bbox, std::vector<Building> buildings, TerrainGrid terrain,
                           std::vector<Cell> cells) {
        validate(terrain);
        const double tol = 1e-6 * (1.0 + std::max(std::abs(bbox.x_max), std::abs(bbox.y_max)));
        const Rect ext = terrain.extent();
        if (!(ext.x_min <= bbox.x_min + tol && ext.y_min <= bbox.y_min + tol && ext.x_max >= bbox.x_max - tol &&
              ext.y_max >= bbox.y_max - tol))
            throw ValidationError("terrain grid does not cover the scenario bounding box");
        for (auto& b : buildings) {
            validate(b);
            for (const auto& v : b.footprint)
                if (!bbox.contains(v.x, v.y, tol))
                    throw ValidationError("building '" + b.id + "' lies outside the scenario bounding box");
            const Vec2 c = centroid(b.footprint);
            b.base_z_m = terrain_elevation(terrain, c.x, c.y);
        }
        std::map<std::string, int> seen;
        for (const auto& c : cells) {
            validate(c);
            if (!bbox.contains(c.position.x, c.position.y, tol))
                throw ValidationError("cell '" + c.id + "' lies outside the scenario bounding box");
            if (seen[c.id]++ > 0) throw ValidationError("duplicate cell id '" + c.id + "'");
        }
        Scenario s;
        s.projection_ = projection;
        s.bbox_ = bbox;
        s.buildings_ = std::move(buildings);
        s.terrain_ = std::move(terrain);
        s.cells_ = std::move(cells);
        return s;
    }

    const Projection& projection() const { return projection_; }
    const Rect& bbox() const { return bbox_; }
    const std::vector<Building>& buildings() const { return buildings_; }
    const TerrainGrid& terrain() const { return terrain_; }
    const std::vector<Cell>& cells() const { return cells_; }

    const Cell* find_cell(std::string_view id) const {
        for (const auto& c : cells_)
            if (c.id == id) return &c;
        return nullptr;
    }
    const Cell& cell(std::string_view id) const {
        if (const Cell* c = find_cell(id)) return *c;
        throw ConsistencyError("unknown cell id '" + std::string(id) + "'");
    }

    /// Cell ids grouped by operator, both levels sorted lexicographically.
    std::map<std::string, std::vector<std::string>> cells_by_mno() const {
        std::map<std::string, std::vector<std::string>> groups;
        for (const auto& c : cells_) groups[c.mno].push_back(c.id);
        for (auto& [mno, ids] : groups) std::sort(ids.begin(), ids.end());
        return groups;
    }

    double ground_z(double x, double y) const { return terrain_elevation(terrain_, x, y); }

    /// Returns a copy with the given cell's EIRP set.
    Scenario with_cell_eirp(std::string_view id, std::optional<double> eirp_dbm) const {
        Scenario s = *this;
        for (auto& c : s.cells_)
            if (c.id == id) {
                c.eirp_dbm = eirp_dbm;
                return s;
            }
        throw ConsistencyError("unknown cell id '" + std::string(id) + "'");
    }

    /// Returns a copy with the buildings replaced (base elevations re-resolved).
    Scenario with_buildings(std::vector<Building> buildings) const {
        return create(projection_, bbox_, std::move(buildings), terrain_, cells_);
    }

    friend bool operator==(const Scenario&, const Scenario&) = default;

private:
    Projection projection_;
    Rect bbox_;
    std::vector<Building> buildings_;
    TerrainGrid terrain_;
    std::vector<Cell> cells_;
};

/// Fills unannotated building heights with the median of raster cells whose
/// centers fall inside the footprint's bounding box. Non-finite cells are skipped.
inline std::vector<Building> calibrate_heights(std::vector<Building> buildings, const TerrainGrid& height_raster) {
    for (auto& b : buildings) {
        if (b.height_source == HeightSource::annotated) continue;
        const Rect box = b.bounds();
        const double cs = height_raster.cell_size_m;
        const int c_lo = std::max(0, static_cast<int>(std::ceil((box.x_min - height_raster.origin.x) / cs - 0.5)));
        const int c_hi =
            std::min(height_raster.cols - 1, static_cast<int>(std::floor((box.x_max - height_raster.origin.x) / cs - 0.5)));
        const int r_lo = std::max(0, static_cast<int>(std::ceil((box.y_min - height_raster.origin.y) / cs - 0.5)));
        const int r_hi =
            std::min(height_raster.rows - 1, static_cast<int>(std::floor((box.y_max - height_raster.origin.y) / cs - 0.5)));
        std::vector<double> covered;
        for (int r = r_lo; r <= r_hi; ++r)
            for (int c = c_lo; c <= c_hi; ++c) {
                const Vec2 center = height_raster.cell_center(r, c);
                const double v = height_raster.at(r, c);
                if (box.contains(center.x, center.y) && std::isfinite(v)) covered.push_back(v);
            }
        double h = 0.0;
        if (!covered.empty()) {
            std::sort(covered.begin(), covered.end());
            const std::size_t n = covered.size();
            h = n % 2 == 1 ? covered[n / 2] : 0.5 * (covered[n / 2 - 1] + covered[n / 2]);
        }
        if (h > 0.0) {
            b.height_m = h;
            b.height_source = HeightSource::calibrated;
        } else {
            b.height_m = kDefaultBuildingHeightM;
            b.height_source = HeightSource::fallback;
        }
    }
    return buildings;
}

}  // namespace dragon
