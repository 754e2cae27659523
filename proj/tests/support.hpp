#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dragon/geo.hpp"
#include "dragon/random.hpp"

namespace dragon::testing {

inline Projection test_projection() { return Projection::around(56.0, 10.0); }

inline Building box_building(std::string id, double x0, double y0, double x1, double y1, double height) {
    Building b;
    b.id = std::move(id);
    b.footprint = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
    b.height_m = height;
    b.height_source = HeightSource::annotated;
    return b;
}

inline Cell make_cell(std::string id, std::string mno, double x, double y, double ground, double height,
                      double freq = 2600.0, double bw = 20.0, std::optional<double> eirp = 60.0) {
    Cell c;
    c.id = std::move(id);
    c.mno = std::move(mno);
    c.position = {x, y, ground + height};
    c.antenna_height_m = height;
    c.freq_mhz = freq;
    c.bandwidth_mhz = bw;
    c.eirp_dbm = eirp;
    return c;
}

/// Flat-ground scenario over `bbox` with the given buildings and cells.
inline Scenario flat_scenario(std::vector<Building> buildings, std::vector<Cell> cells = {},
                              Rect bbox = {-500.0, -500.0, 500.0, 500.0}, double ground = 0.0) {
    return Scenario::create(test_projection(), bbox, std::move(buildings), TerrainGrid::flat(bbox, ground), std::move(cells));
}

/// Random axis-aligned box inside `area`; overlaps are allowed.
inline Building random_box(Rng& rng, const std::string& id, const Rect& area, double min_side, double max_side,
                           double min_h, double max_h) {
    const double w = rng.uniform(min_side, max_side), h = rng.uniform(min_side, max_side);
    const double x = rng.uniform(area.x_min, area.x_max - w), y = rng.uniform(area.y_min, area.y_max - h);
    return box_building(id, x, y, x + w, y + h, rng.uniform(min_h, max_h));
}

/// Fresh per-test scratch directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("dragon_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// FNV-1a over raw bytes, for frozen golden checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
    return h;
}

/// Geodetic fixture: 0.01 x 0.01 degree box near (56.155, 10.205) with a flat
/// terrain grid at `ground` metres, given building and cell JSON arrays.
inline std::string fixture_scenario_json(const std::string& buildings, const std::string& cells) {
    return R"({"bbox": {"lat_min": 56.15, "lat_max": 56.16, "lon_min": 10.20, "lon_max": 10.21},
  "buildings": )" + buildings + R"(,
  "cells": )" + cells + "}\n";
}

inline std::string fixture_terrain_asc(double ground = 10.0) {
    std::string out = "ncols 8\nnrows 8\nxllcorner 10.198\nyllcorner 56.148\ncellsize 0.002\nNODATA_value -9999\n";
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) out += (c ? " " : "") + std::to_string(ground);
        out += "\n";
    }
    return out;
}

inline const char* kFixtureCells = R"([
    {"id": "a1", "mno": "A", "lat": 56.155, "lon": 10.205, "antenna_height_m": 30, "freq_mhz": 2600, "bandwidth_mhz": 20},
    {"id": "a2", "mno": "A", "lat": 56.158, "lon": 10.202, "antenna_height_m": 25, "freq_mhz": 1800, "bandwidth_mhz": 10},
    {"id": "b1", "mno": "B", "lat": 56.152, "lon": 10.208, "antenna_height_m": 28, "freq_mhz": 800, "bandwidth_mhz": 10}])";

inline const char* kFixtureBuildings = R"([
    {"id": "tri", "outline": [[56.1540, 10.2060], [56.1540, 10.2070], [56.1546, 10.2065]], "height_m": 15}])";

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

}  // namespace dragon::testing
