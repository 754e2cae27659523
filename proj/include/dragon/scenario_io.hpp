#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dragon/errors.hpp"
#include "dragon/geo.hpp"
#include "dragon/io/text.hpp"
#include "dragon/log.hpp"

namespace dragon {

/// ESRI ASCII grid as stored on disk: row 0 is the northern edge, georeferenced in degrees.
struct AsciiGrid {
    int ncols = 0;
    int nrows = 0;
    double xll = 0.0;  // lower-left corner longitude
    double yll = 0.0;  // lower-left corner latitude
    double cellsize = 0.0;
    std::optional<double> nodata;
    std::vector<double> values;  // row-major, north to south; NODATA replaced by NaN

    double at_north_row(int r, int c) const { return values[static_cast<std::size_t>(r) * ncols + c]; }
};

inline AsciiGrid parse_ascii_grid(std::string_view text, const std::string& source = "<grid>") {
    AsciiGrid g;
    bool have_xll = false, have_yll = false, xll_center = false, yll_center = false;
    const auto all_lines = io::lines(text);
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw ParseError(source + ":" + std::to_string(line_no + 1) + ": " + what);
    };
    for (; line_no < all_lines.size(); ++line_no) {
        const auto line = io::trim(all_lines[line_no]);
        if (line.empty()) continue;
        std::istringstream ss{std::string(line)};
        std::string key, value;
        ss >> key >> value;
        std::string lower = key;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        if (!lower.empty() && (std::isdigit(static_cast<unsigned char>(lower[0])) || lower[0] == '-' ||
                               lower[0] == '+' || lower[0] == '.'))
            break;
        const auto v = io::parse_double(value);
        if (!v) fail("header '" + key + "' has non-numeric value '" + value + "'");
        if (lower == "ncols") g.ncols = static_cast<int>(*v);
        else if (lower == "nrows") g.nrows = static_cast<int>(*v);
        else if (lower == "xllcorner" || lower == "xllcenter") { g.xll = *v; have_xll = true; xll_center = lower == "xllcenter"; }
        else if (lower == "yllcorner" || lower == "yllcenter") { g.yll = *v; have_yll = true; yll_center = lower == "yllcenter"; }
        else if (lower == "cellsize") g.cellsize = *v;
        else if (lower == "nodata_value") g.nodata = *v;
        else fail("unknown header key '" + key + "'");
    }
    if (g.ncols < 1 || g.nrows < 1) fail("ncols/nrows must be positive");
    if (!have_xll || !have_yll) fail("missing xllcorner/yllcorner");
    if (!(g.cellsize > 0.0)) fail("cellsize must be > 0");
    if (xll_center) g.xll -= 0.5 * g.cellsize;
    if (yll_center) g.yll -= 0.5 * g.cellsize;

    const std::size_t expected = static_cast<std::size_t>(g.ncols) * g.nrows;
    g.values.reserve(expected);
    for (; line_no < all_lines.size(); ++line_no) {
        std::istringstream ss{std::string(all_lines[line_no])};
        std::string token;
        while (ss >> token) {
            const auto v = io::parse_double(token);
            if (!v) fail("non-numeric grid value '" + token + "'");
            if (g.values.size() == expected) fail("more grid values than ncols x nrows");
            const bool missing = g.nodata && *v == *g.nodata;
            g.values.push_back(missing ? std::numeric_limits<double>::quiet_NaN() : *v);
        }
    }
    if (g.values.size() != expected)
        throw ParseError(source + ": expected " + std::to_string(expected) + " grid values, found " +
                         std::to_string(g.values.size()));
    return g;
}

enum class Resample { bilinear, nearest };

/// Resamples a degree-georeferenced grid onto a square metric grid whose cell
/// size equals the source's north-south cell extent.
inline TerrainGrid to_local_grid(const AsciiGrid& g, const Projection& proj, Resample mode) {
    const double cell_m = g.cellsize * proj.m_per_deg_lat;
    const LocalPoint sw = project({g.yll, g.xll, 0.0}, proj);
    const double width_m = g.ncols * g.cellsize * proj.m_per_deg_lon;
    const double height_m = g.nrows * g.cellsize * proj.m_per_deg_lat;
    TerrainGrid t;
    t.origin = {sw.x, sw.y, 0.0};
    t.cell_size_m = cell_m;
    t.cols = std::max(1, static_cast<int>(std::ceil(width_m / cell_m - 1e-9)));
    t.rows = std::max(1, static_cast<int>(std::ceil(height_m / cell_m - 1e-9)));
    t.elevation.resize(static_cast<std::size_t>(t.rows) * t.cols);
    // source value by (row from south, col)
    auto src = [&](int rs, int c) { return g.at_north_row(g.nrows - 1 - rs, c); };
    for (int r = 0; r < t.rows; ++r)
        for (int c = 0; c < t.cols; ++c) {
            const Vec2 center = t.cell_center(r, c);
            const GeoPoint geo = unproject({center.x, center.y, 0.0}, proj);
            const double fx = std::clamp((geo.lon - g.xll) / g.cellsize - 0.5, 0.0, g.ncols - 1.0);
            const double fy = std::clamp((geo.lat - g.yll) / g.cellsize - 0.5, 0.0, g.nrows - 1.0);
            double v;
            if (mode == Resample::nearest) {
                v = src(static_cast<int>(std::lround(fy)), static_cast<int>(std::lround(fx)));
            } else {
                const int c0 = std::min(static_cast<int>(fx), std::max(0, g.ncols - 2));
                const int r0 = std::min(static_cast<int>(fy), std::max(0, g.nrows - 2));
                const int c1 = std::min(c0 + 1, g.ncols - 1), r1 = std::min(r0 + 1, g.nrows - 1);
                const double wx = fx - c0, wy = fy - r0;
                const double s = src(r0, c0) + wx * (src(r0, c1) - src(r0, c0));
                const double n = src(r1, c0) + wx * (src(r1, c1) - src(r1, c0));
                v = s + wy * (n - s);
            }
            t.at(r, c) = v;
        }
    return t;
}

namespace detail {

using nlohmann::json;

inline json parse_json(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte ? byte - 1 : 0), '\n');
        throw ParseError(source + ":" + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
}

inline const json& field(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) throw ParseError(path + ": expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(path + ": missing field '" + key + "'");
    return *it;
}

inline double number(const json& obj, const char* key, const std::string& path) {
    const json& v = field(obj, key, path);
    if (!v.is_number()) throw ParseError(path + "." + key + ": expected a number");
    return v.get<double>();
}

inline std::optional<double> optional_number(const json& obj, const char* key, const std::string& path) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw ParseError(path + "." + key + ": expected a number");
    return it->get<double>();
}

inline std::string text(const json& obj, const char* key, const std::string& path) {
    const json& v = field(obj, key, path);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw ParseError(path + "." + key + ": expected a string");
}

}  // namespace detail

/// In-memory scenario documents; names are used in diagnostics.
struct ScenarioSources {
    std::string scenario_text, scenario_name = "<scenario>";
    std::string terrain_text, terrain_name = "<terrain>";
    std::optional<std::string> raster_text;
    std::string raster_name = "<heights>";
};

/// Parses the scenario JSON, the terrain grid, and an optional above-ground height
/// raster into a validated Scenario in a frame centered on the bbox.
inline Scenario parse_scenario(const ScenarioSources& src) {
    using detail::json;
    const std::string& scenario_file = src.scenario_name;
    const std::string& terrain_file = src.terrain_name;
    const json doc = detail::parse_json(src.scenario_text, scenario_file);
    const std::string root = scenario_file;

    const json& jb = detail::field(doc, "bbox", root);
    const double lat_min = detail::number(jb, "lat_min", root + ".bbox");
    const double lat_max = detail::number(jb, "lat_max", root + ".bbox");
    const double lon_min = detail::number(jb, "lon_min", root + ".bbox");
    const double lon_max = detail::number(jb, "lon_max", root + ".bbox");
    validate(GeoPoint{lat_min, lon_min, 0.0});
    validate(GeoPoint{lat_max, lon_max, 0.0});
    if (!(lat_max > lat_min && lon_max > lon_min)) throw ValidationError(root + ".bbox: empty bounding box");
    const Projection proj = Projection::around(0.5 * (lat_min + lat_max), 0.5 * (lon_min + lon_max));
    const LocalPoint lo = project({lat_min, lon_min, 0.0}, proj);
    const LocalPoint hi = project({lat_max, lon_max, 0.0}, proj);
    const Rect bbox{lo.x, lo.y, hi.x, hi.y};

    AsciiGrid terrain_src = parse_ascii_grid(src.terrain_text, terrain_file);
    std::size_t missing = 0;
    for (double& v : terrain_src.values)
        if (!std::isfinite(v)) {
            v = 0.0;
            ++missing;
        }
    if (missing > 0)
        log::warn(terrain_file + ": " + std::to_string(missing) + " NODATA terrain cells treated as sea level");
    TerrainGrid terrain = to_local_grid(terrain_src, proj, Resample::bilinear);

    std::vector<Building> buildings;
    const json& jbuildings = detail::field(doc, "buildings", root);
    if (!jbuildings.is_array()) throw ParseError(root + ".buildings: expected an array");
    for (std::size_t i = 0; i < jbuildings.size(); ++i) {
        const json& jb_i = jbuildings[i];
        const std::string path = root + ".buildings[" + std::to_string(i) + "]";
        Building b;
        b.id = detail::text(jb_i, "id", path);
        const json& outline = detail::field(jb_i, "outline", path);
        if (!outline.is_array()) throw ParseError(path + ".outline: expected an array of [lat, lon]");
        std::vector<Vec2> ring;
        for (std::size_t k = 0; k < outline.size(); ++k) {
            const json& v = outline[k];
            if (!v.is_array() || v.size() < 2 || !v[0].is_number() || !v[1].is_number())
                throw ParseError(path + ".outline[" + std::to_string(k) + "]: expected [lat, lon]");
            const GeoPoint g{v[0].get<double>(), v[1].get<double>(), 0.0};
            validate(g);
            ring.push_back(project(g, proj).xy());
        }
        b.footprint = normalize_ring(std::move(ring));
        if (auto h = detail::optional_number(jb_i, "height_m", path)) {
            b.height_m = *h;
            b.height_source = HeightSource::annotated;
        } else {
            b.height_m = kDefaultBuildingHeightM;
            b.height_source = HeightSource::fallback;
        }
        buildings.push_back(std::move(b));
    }
    if (src.raster_text) {
        const AsciiGrid raster = parse_ascii_grid(*src.raster_text, src.raster_name);
        buildings = calibrate_heights(std::move(buildings), to_local_grid(raster, proj, Resample::nearest));
    }

    std::vector<Cell> cells;
    const json& jcells = detail::field(doc, "cells", root);
    if (!jcells.is_array()) throw ParseError(root + ".cells: expected an array");
    for (std::size_t i = 0; i < jcells.size(); ++i) {
        const json& jc = jcells[i];
        const std::string path = root + ".cells[" + std::to_string(i) + "]";
        Cell c;
        c.id = detail::text(jc, "id", path);
        c.mno = detail::text(jc, "mno", path);
        const GeoPoint g{detail::number(jc, "lat", path), detail::number(jc, "lon", path), 0.0};
        validate(g);
        c.antenna_height_m = detail::number(jc, "antenna_height_m", path);
        if (!(c.antenna_height_m > 0.0)) throw ValidationError(path + ": antenna_height_m must be > 0");
        c.freq_mhz = detail::number(jc, "freq_mhz", path);
        c.bandwidth_mhz = detail::number(jc, "bandwidth_mhz", path);
        c.eirp_dbm = detail::optional_number(jc, "eirp_dbm", path);
        c.position = project(g, proj);
        if (!bbox.contains(c.position.x, c.position.y, 1e-6))
            throw ValidationError(path + ": cell '" + c.id + "' lies outside the scenario bounding box");
        c.position.z = terrain_elevation(terrain, c.position.x, c.position.y) + c.antenna_height_m;
        cells.push_back(std::move(c));
    }
    return Scenario::create(proj, bbox, std::move(buildings), std::move(terrain), std::move(cells));
}

inline Scenario load_scenario(const std::string& scenario_file, const std::string& terrain_file,
                              const std::optional<std::string>& height_raster_file = std::nullopt) {
    ScenarioSources src;
    src.scenario_text = io::read_file(scenario_file);
    src.scenario_name = scenario_file;
    src.terrain_text = io::read_file(terrain_file);
    src.terrain_name = terrain_file;
    if (height_raster_file) {
        src.raster_text = io::read_file(*height_raster_file);
        src.raster_name = *height_raster_file;
    }
    return parse_scenario(src);
}

/// Sets `eirp_dbm` on every cell of the original scenario JSON that has a fitted value.
inline std::string patch_scenario_eirp(const std::string& scenario_json, const Scenario& s) {
    auto doc = detail::parse_json(scenario_json, "<scenario>");
    for (auto& jc : doc.at("cells")) {
        const std::string id = jc.at("id").is_string() ? jc.at("id").get<std::string>()
                                                       : std::to_string(jc.at("id").get<long long>());
        if (const Cell* c = s.find_cell(id); c && c->eirp_dbm) jc["eirp_dbm"] = *c->eirp_dbm;
    }
    return doc.dump(2) + "\n";
}

/// Reads `lat,lon,alt_m,cell_id,rsrp_dbm`. alt_m is above ground (empty = 1.5 m)
/// and is resolved to sea level through the terrain. Rows outside the bbox are skipped.
inline std::vector<Measurement> load_measurements(const std::string& path, const Scenario& s,
                                                  std::vector<std::size_t>* kept_rows = nullptr) {
    const std::string content = io::read_file(path);
    const auto rows = io::lines(content);
    if (rows.empty() || io::trim(rows[0]) != "lat,lon,alt_m,cell_id,rsrp_dbm")
        throw ParseError(path + ":1: expected header 'lat,lon,alt_m,cell_id,rsrp_dbm'");
    std::vector<Measurement> out;
    std::size_t skipped = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (io::trim(rows[i]).empty()) continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        const auto f = io::split(rows[i], ',');
        if (f.size() != 5) throw ParseError(where + ": expected 5 fields, found " + std::to_string(f.size()));
        const auto lat = io::parse_double(f[0]);
        const auto lon = io::parse_double(f[1]);
        if (!lat || !lon) throw ParseError(where + ": lat/lon must be numeric");
        std::optional<double> alt = io::trim(f[2]).empty() ? std::optional<double>(kDefaultReceiverHeightM)
                                                           : io::parse_double(f[2]);
        if (!alt) throw ParseError(where + ": alt_m must be numeric or empty");
        const auto rsrp = io::parse_double(f[4]);
        if (!rsrp) throw ParseError(where + ": rsrp_dbm must be numeric");
        Measurement m;
        m.cell_id = std::string(io::trim(f[3]));
        m.rsrp_dbm = *rsrp;
        try {
            validate(GeoPoint{*lat, *lon, 0.0});
            validate(m);
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        if (!s.find_cell(m.cell_id)) throw ValidationError(where + ": unknown cell_id '" + m.cell_id + "'");
        m.position = project({*lat, *lon, 0.0}, s.projection());
        if (!s.bbox().contains(m.position.x, m.position.y)) {
            ++skipped;
            continue;
        }
        m.position.z = s.ground_z(m.position.x, m.position.y) + *alt;
        out.push_back(std::move(m));
        if (kept_rows) kept_rows->push_back(i - 1);
    }
    if (skipped > 0) log::warn(path + ": skipped " + std::to_string(skipped) + " measurements outside the bbox");
    return out;
}

inline std::string format_double(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

// ---- validated scenario bundle (local frame, lossless) ----

inline nlohmann::json to_json(const Scenario& s) {
    using nlohmann::json;
    json j;
    j["format"] = "dragon-scenario-bundle";
    j["version"] = 1;
    const auto& p = s.projection();
    j["projection"] = {{"lat0", p.lat0}, {"lon0", p.lon0}, {"m_per_deg_lat", p.m_per_deg_lat},
                       {"m_per_deg_lon", p.m_per_deg_lon}};
    const auto& b = s.bbox();
    j["bbox"] = {b.x_min, b.y_min, b.x_max, b.y_max};
    j["buildings"] = json::array();
    for (const auto& bd : s.buildings()) {
        json fp = json::array();
        for (const auto& v : bd.footprint) fp.push_back({v.x, v.y});
        j["buildings"].push_back({{"id", bd.id},
                                  {"footprint", fp},
                                  {"height_m", bd.height_m},
                                  {"height_source", std::string(to_string(bd.height_source))}});
    }
    const auto& t = s.terrain();
    j["terrain"] = {{"origin", {t.origin.x, t.origin.y}},
                    {"cell_size_m", t.cell_size_m},
                    {"rows", t.rows},
                    {"cols", t.cols},
                    {"elevation", t.elevation}};
    j["cells"] = json::array();
    for (const auto& c : s.cells()) {
        json jc = {{"id", c.id},
                   {"mno", c.mno},
                   {"position", {c.position.x, c.position.y, c.position.z}},
                   {"antenna_height_m", c.antenna_height_m},
                   {"freq_mhz", c.freq_mhz},
                   {"bandwidth_mhz", c.bandwidth_mhz}};
        jc["eirp_dbm"] = c.eirp_dbm ? json(*c.eirp_dbm) : json(nullptr);
        j["cells"].push_back(jc);
    }
    return j;
}

inline std::string save_bundle(const Scenario& s) { return to_json(s).dump(1) + "\n"; }

inline Scenario load_bundle_text(const std::string& text, const std::string& source = "<bundle>") {
    using nlohmann::json;
    const json j = detail::parse_json(text, source);
    try {
        if (j.at("format") != "dragon-scenario-bundle" || j.at("version") != 1)
            throw ParseError(source + ": not a version-1 scenario bundle");
        Projection p{j.at("projection").at("lat0"), j.at("projection").at("lon0"),
                     j.at("projection").at("m_per_deg_lat"), j.at("projection").at("m_per_deg_lon")};
        const auto& jb = j.at("bbox");
        Rect bbox{jb.at(0), jb.at(1), jb.at(2), jb.at(3)};
        std::vector<Building> buildings;
        for (const auto& jbd : j.at("buildings")) {
            Building b;
            b.id = jbd.at("id").get<std::string>();
            for (const auto& v : jbd.at("footprint")) b.footprint.push_back({v.at(0), v.at(1)});
            b.height_m = jbd.at("height_m");
            b.height_source = height_source_from(jbd.at("height_source").get<std::string>());
            buildings.push_back(std::move(b));
        }
        const auto& jt = j.at("terrain");
        TerrainGrid t;
        t.origin = {jt.at("origin").at(0), jt.at("origin").at(1), 0.0};
        t.cell_size_m = jt.at("cell_size_m");
        t.rows = jt.at("rows");
        t.cols = jt.at("cols");
        t.elevation = jt.at("elevation").get<std::vector<double>>();
        std::vector<Cell> cells;
        for (const auto& jc : j.at("cells")) {
            Cell c;
            c.id = jc.at("id").get<std::string>();
            c.mno = jc.at("mno").get<std::string>();
            c.position = {jc.at("position").at(0), jc.at("position").at(1), jc.at("position").at(2)};
            c.antenna_height_m = jc.at("antenna_height_m");
            c.freq_mhz = jc.at("freq_mhz");
            c.bandwidth_mhz = jc.at("bandwidth_mhz");
            if (!jc.at("eirp_dbm").is_null()) c.eirp_dbm = jc.at("eirp_dbm").get<double>();
            cells.push_back(std::move(c));
        }
        return Scenario::create(p, bbox, std::move(buildings), std::move(t), std::move(cells));
    } catch (const json::exception& e) {
        throw ParseError(source + ": malformed bundle (" + e.what() + ")");
    }
}

inline Scenario load_bundle(const std::string& path) { return load_bundle_text(io::read_file(path), path); }

}  // namespace dragon
