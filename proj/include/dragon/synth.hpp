#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "dragon/channels.hpp"
#include "dragon/errors.hpp"
#include "dragon/geo.hpp"
#include "dragon/io/text.hpp"
#include "dragon/random.hpp"
#include "dragon/raypath.hpp"
#include "dragon/scenario_io.hpp"

namespace dragon {

/// Random prism city with known ground truth. Measured RSRP follows the link
/// budget with L = UMa B (geometric LOS) + obstacle shadowing excess, plus
/// Gaussian noise of `sigma_db`.
struct SynthParams {
    double center_lat = 56.1572;
    double center_lon = 10.2107;
    double width_m = 800.0;
    double height_m = 800.0;
    int n_buildings = 50;
    double footprint_min_m = 12.0;
    double footprint_max_m = 40.0;
    double building_height_min_m = 6.0;
    double building_height_max_m = 30.0;
    int n_cells = 2;
    double antenna_height_min_m = 25.0;
    double antenna_height_max_m = 35.0;
    std::vector<double> freqs_mhz{800.0, 1800.0, 2600.0};
    std::vector<double> bandwidths_mhz{10.0, 20.0};
    double eirp_min_dbm = 55.0;
    double eirp_max_dbm = 65.0;
    int n_measurements = 5000;
    double sigma_db = 2.0;
    double rx_height_m = kDefaultReceiverHeightM;
    double terrain_base_m = 40.0;
    double terrain_slope_max = 0.02;
    double terrain_cell_m = kDefaultTerrainCellM;
    double min_rsrp_dbm = -140.0;
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SynthParams& p) {
    j = {{"center_lat", p.center_lat},
         {"center_lon", p.center_lon},
         {"width_m", p.width_m},
         {"height_m", p.height_m},
         {"n_buildings", p.n_buildings},
         {"footprint_min_m", p.footprint_min_m},
         {"footprint_max_m", p.footprint_max_m},
         {"building_height_min_m", p.building_height_min_m},
         {"building_height_max_m", p.building_height_max_m},
         {"n_cells", p.n_cells},
         {"antenna_height_min_m", p.antenna_height_min_m},
         {"antenna_height_max_m", p.antenna_height_max_m},
         {"freqs_mhz", p.freqs_mhz},
         {"bandwidths_mhz", p.bandwidths_mhz},
         {"eirp_min_dbm", p.eirp_min_dbm},
         {"eirp_max_dbm", p.eirp_max_dbm},
         {"n_measurements", p.n_measurements},
         {"sigma_db", p.sigma_db},
         {"rx_height_m", p.rx_height_m},
         {"terrain_base_m", p.terrain_base_m},
         {"terrain_slope_max", p.terrain_slope_max},
         {"terrain_cell_m", p.terrain_cell_m},
         {"min_rsrp_dbm", p.min_rsrp_dbm},
         {"seed", p.seed}};
}

/// Overrides fields present in `j`; unknown keys are rejected.
inline void update_from_json(SynthParams& p, const nlohmann::json& j) {
    nlohmann::json cur = p;
    for (const auto& [k, v] : j.items())
        if (!cur.contains(k)) throw ValidationError("unknown synth parameter '" + k + "'");
    cur.update(j);
    p.center_lat = cur["center_lat"];
    p.center_lon = cur["center_lon"];
    p.width_m = cur["width_m"];
    p.height_m = cur["height_m"];
    p.n_buildings = cur["n_buildings"];
    p.footprint_min_m = cur["footprint_min_m"];
    p.footprint_max_m = cur["footprint_max_m"];
    p.building_height_min_m = cur["building_height_min_m"];
    p.building_height_max_m = cur["building_height_max_m"];
    p.n_cells = cur["n_cells"];
    p.antenna_height_min_m = cur["antenna_height_min_m"];
    p.antenna_height_max_m = cur["antenna_height_max_m"];
    p.freqs_mhz = cur["freqs_mhz"].get<std::vector<double>>();
    p.bandwidths_mhz = cur["bandwidths_mhz"].get<std::vector<double>>();
    p.eirp_min_dbm = cur["eirp_min_dbm"];
    p.eirp_max_dbm = cur["eirp_max_dbm"];
    p.n_measurements = cur["n_measurements"];
    p.sigma_db = cur["sigma_db"];
    p.rx_height_m = cur["rx_height_m"];
    p.terrain_base_m = cur["terrain_base_m"];
    p.terrain_slope_max = cur["terrain_slope_max"];
    p.terrain_cell_m = cur["terrain_cell_m"];
    p.min_rsrp_dbm = cur["min_rsrp_dbm"];
    p.seed = cur["seed"];
}

inline void validate(const SynthParams& p) {
    validate(GeoPoint{p.center_lat, p.center_lon, 0.0});
    auto fail = [](const std::string& m) { throw ValidationError("synth: " + m); };
    if (!(p.width_m >= 100.0 && p.height_m >= 100.0)) fail("width_m and height_m must be >= 100");
    if (p.n_buildings < 0) fail("n_buildings must be >= 0");
    if (!(p.footprint_min_m > 0.0 && p.footprint_max_m >= p.footprint_min_m)) fail("invalid footprint range");
    if (!(p.building_height_min_m > 0.0 && p.building_height_max_m >= p.building_height_min_m))
        fail("invalid building height range");
    if (p.n_cells < 1) fail("n_cells must be >= 1");
    if (!(p.antenna_height_min_m > 0.0 && p.antenna_height_max_m >= p.antenna_height_min_m))
        fail("invalid antenna height range");
    if (p.freqs_mhz.empty() || p.bandwidths_mhz.empty()) fail("freqs_mhz and bandwidths_mhz must be non-empty");
    for (double f : p.freqs_mhz)
        if (!(f > 0.0)) fail("frequencies must be > 0");
    for (double b : p.bandwidths_mhz) n_prb_from_bandwidth(b);
    if (!(p.eirp_max_dbm >= p.eirp_min_dbm)) fail("invalid EIRP range");
    if (p.n_measurements < 0) fail("n_measurements must be >= 0");
    if (!(p.sigma_db >= 0.0)) fail("sigma_db must be >= 0");
    if (!(p.rx_height_m > 0.0)) fail("rx_height_m must be > 0");
    if (!(p.terrain_cell_m > 0.0) || !(p.terrain_slope_max >= 0.0)) fail("invalid terrain parameters");
    if (!(p.min_rsrp_dbm >= kMinPlausibleRsrp)) fail("min_rsrp_dbm below the plausible range");
}

struct SynthOutput {
    std::string scenario_json;
    std::string terrain_asc;
    std::string measurements_csv;
    std::string truth_csv;   // same rows without noise
    std::string truth_json;  // true EIRP and per-row excess loss
};

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

/// Parses back the printed coordinate so the generator sees exactly what loaders will.
inline double printed(const char* f, double v) { return *io::parse_double(fmt(f, v)); }

}  // namespace detail

inline SynthOutput synthesize(const SynthParams& p) {
    validate(p);
    Rng rng(p.seed);
    const Projection proj = Projection::around(p.center_lat, p.center_lon);
    const double hw = 0.5 * p.width_m, hh = 0.5 * p.height_m;
    const GeoPoint sw = unproject({-hw, -hh, 0.0}, proj), ne = unproject({hw, hh, 0.0}, proj);
    nlohmann::json doc;
    doc["bbox"] = {{"lat_min", sw.lat}, {"lat_max", ne.lat}, {"lon_min", sw.lon}, {"lon_max", ne.lon}};

    // cells in the inner half of the area, at least 100 m apart
    struct CellDraw {
        Vec2 xy;
        double height, freq, bw, eirp;
    };
    std::vector<CellDraw> cells;
    for (int attempt = 0; static_cast<int>(cells.size()) < p.n_cells; ++attempt) {
        if (attempt > 10000) throw ValidationError("synth: could not place cells 100 m apart");
        const Vec2 xy{rng.uniform(-0.5 * hw, 0.5 * hw), rng.uniform(-0.5 * hh, 0.5 * hh)};
        bool ok = true;
        for (const auto& c : cells) ok = ok && norm(c.xy - xy) >= 100.0;
        if (!ok) continue;
        CellDraw c{xy, rng.uniform(p.antenna_height_min_m, p.antenna_height_max_m),
                   p.freqs_mhz[rng.below(p.freqs_mhz.size())], p.bandwidths_mhz[rng.below(p.bandwidths_mhz.size())],
                   rng.uniform(p.eirp_min_dbm, p.eirp_max_dbm)};
        cells.push_back(c);
    }

    // rotated rectangles, pairwise separated, clear of the cell sites
    std::vector<std::vector<Vec2>> rings;
    std::vector<Rect> boxes;
    for (int attempt = 0; static_cast<int>(rings.size()) < p.n_buildings; ++attempt) {
        if (attempt > 200000) throw ValidationError("synth: could not place " + std::to_string(p.n_buildings) + " buildings");
        const double a = rng.uniform(p.footprint_min_m, p.footprint_max_m);
        const double b = rng.uniform(p.footprint_min_m, p.footprint_max_m);
        const double th = rng.uniform(0.0, std::numbers::pi);
        const double r = 0.5 * std::hypot(a, b) + 1.0;
        const Vec2 c{rng.uniform(-hw + r, hw - r), rng.uniform(-hh + r, hh - r)};
        const Vec2 u{std::cos(th), std::sin(th)}, v{-std::sin(th), std::cos(th)};
        std::vector<Vec2> ring{c - 0.5 * a * u - 0.5 * b * v, c + 0.5 * a * u - 0.5 * b * v, c + 0.5 * a * u + 0.5 * b * v,
                               c - 0.5 * a * u + 0.5 * b * v};
        const Rect box = bounds_of(ring);
        const Rect grown{box.x_min - 3.0, box.y_min - 3.0, box.x_max + 3.0, box.y_max + 3.0};
        bool ok = true;
        for (const auto& o : boxes) ok = ok && !grown.overlaps(o);
        for (const auto& cd : cells) ok = ok && norm(cd.xy - c) > r + 15.0;
        if (!ok) continue;
        rings.push_back(std::move(ring));
        boxes.push_back(box);
    }
    doc["buildings"] = nlohmann::json::array();
    for (std::size_t i = 0; i < rings.size(); ++i) {
        nlohmann::json outline = nlohmann::json::array();
        for (const auto& q : rings[i]) {
            const GeoPoint g = unproject({q.x, q.y, 0.0}, proj);
            outline.push_back({detail::printed("%.10f", g.lat), detail::printed("%.10f", g.lon)});
        }
        const double h = std::round(rng.uniform(p.building_height_min_m, p.building_height_max_m) * 10.0) / 10.0;
        doc["buildings"].push_back({{"id", "b" + std::to_string(i + 1)}, {"outline", outline}, {"height_m", h}});
    }
    doc["cells"] = nlohmann::json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const GeoPoint g = unproject({cells[i].xy.x, cells[i].xy.y, 0.0}, proj);
        doc["cells"].push_back({{"id", "cell_" + std::to_string(i + 1)},
                                {"mno", std::string(1, static_cast<char>('A' + i % 26))},
                                {"lat", detail::printed("%.10f", g.lat)},
                                {"lon", detail::printed("%.10f", g.lon)},
                                {"antenna_height_m", std::round(cells[i].height * 10.0) / 10.0},
                                {"freq_mhz", cells[i].freq},
                                {"bandwidth_mhz", cells[i].bw}});
    }

    // planar terrain on a degree grid with a two-cell margin
    const double sx = rng.uniform(-p.terrain_slope_max, p.terrain_slope_max);
    const double sy = rng.uniform(-p.terrain_slope_max, p.terrain_slope_max);
    const double cs = p.terrain_cell_m / proj.m_per_deg_lat;
    const double xll = sw.lon - 2.0 * cs, yll = sw.lat - 2.0 * cs;
    const int ncols = static_cast<int>(std::ceil((ne.lon - sw.lon) / cs)) + 4;
    const int nrows = static_cast<int>(std::ceil((ne.lat - sw.lat) / cs)) + 4;
    SynthOutput out;
    out.terrain_asc = "ncols " + std::to_string(ncols) + "\nnrows " + std::to_string(nrows) + "\nxllcorner " +
                      detail::fmt("%.10f", xll) + "\nyllcorner " + detail::fmt("%.10f", yll) + "\ncellsize " +
                      detail::fmt("%.12g", cs) + "\nNODATA_value -9999\n";
    for (int r = 0; r < nrows; ++r) {
        for (int c = 0; c < ncols; ++c) {
            const double lat = *io::parse_double(detail::fmt("%.10f", yll)) + (nrows - r - 0.5) * cs;
            const double lon = *io::parse_double(detail::fmt("%.10f", xll)) + (c + 0.5) * cs;
            const LocalPoint q = project({lat, lon, 0.0}, proj);
            out.terrain_asc += (c ? " " : "") + detail::fmt("%.4f", p.terrain_base_m + sx * q.x + sy * q.y);
        }
        out.terrain_asc += "\n";
    }
    out.scenario_json = doc.dump(2) + "\n";

    ScenarioSources src;
    src.scenario_text = out.scenario_json;
    src.terrain_text = out.terrain_asc;
    Scenario s = parse_scenario(src);
    for (std::size_t i = 0; i < cells.size(); ++i) s = s.with_cell_eirp("cell_" + std::to_string(i + 1), cells[i].eirp);

    const ChannelParams truth_params;  // geometric LOS, beta 9, gamma 0.4
    std::string header = "lat,lon,alt_m,cell_id,rsrp_dbm\n";
    out.measurements_csv = header;
    out.truth_csv = header;
    nlohmann::json excess = nlohmann::json::array();
    const std::string alt = detail::fmt("%g", p.rx_height_m);
    const Rect box = s.bbox();
    for (int k = 0; k < p.n_measurements;) {
        const Cell& cell = s.cells()[rng.below(s.cells().size())];
        const double x = rng.uniform(box.x_min + 1.0, box.x_max - 1.0);
        const double y = rng.uniform(box.y_min + 1.0, box.y_max - 1.0);
        const GeoPoint g = unproject({x, y, 0.0}, proj);
        const std::string lat_s = detail::fmt("%.9f", g.lat), lon_s = detail::fmt("%.9f", g.lon);
        LocalPoint rx = project({*io::parse_double(lat_s), *io::parse_double(lon_s), 0.0}, s.projection());
        if (!box.contains(rx.x, rx.y)) continue;
        if (std::hypot(rx.x - cell.position.x, rx.y - cell.position.y) < 10.0) continue;
        bool indoors = false;
        for (const auto& b : s.buildings()) indoors = indoors || point_in_polygon_strict(rx.xy(), b.footprint);
        if (indoors) continue;
        rx.z = s.ground_z(rx.x, rx.y) + *io::parse_double(alt);
        const LinkGeometry lg = link_geometry(s, cell, rx);
        const double base = baseline_loss(cell, lg, truth_params);
        const double loss = obstacle_shadowing(base, lg.profile, truth_params);
        const double truth = rsrp({*cell.eirp_dbm, loss, 0.0, n_prb_from_bandwidth(cell.bandwidth_mhz)});
        const double noisy = truth + p.sigma_db * rng.normal();
        if (truth < p.min_rsrp_dbm || noisy < kMinPlausibleRsrp || noisy > kMaxPlausibleRsrp ||
            truth > kMaxPlausibleRsrp)
            continue;
        const std::string row = lat_s + "," + lon_s + "," + alt + "," + cell.id + ",";
        out.truth_csv += row + detail::fmt("%.3f", truth) + "\n";
        out.measurements_csv += row + detail::fmt("%.3f", p.sigma_db == 0.0 ? truth : noisy) + "\n";
        excess.push_back(loss - base);
        ++k;
    }

    nlohmann::json truth;
    truth["params"] = p;
    truth["terrain_slope"] = {sx, sy};
    for (const auto& c : s.cells()) truth["eirp_dbm"][c.id] = *c.eirp_dbm;
    truth["excess_loss_db"] = excess;
    out.truth_json = truth.dump(1) + "\n";
    return out;
}

}  // namespace dragon
