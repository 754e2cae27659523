#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dragon/errors.hpp"
#include "dragon/geo.hpp"
#include "dragon/io/pgm.hpp"
#include "dragon/predictor.hpp"
#include "dragon/scenario_io.hpp"

namespace dragon {

/// Marks grid cells excluded by outdoor-only masking.
inline constexpr double kNoCoverage = std::numeric_limits<double>::quiet_NaN();

/// RSRP layers over a regular grid; row 0 is the northern edge.
struct REMGrid {
    Rect bbox;
    double resolution_m = 0.0;
    int rows = 0;
    int cols = 0;
    double rx_height_m = kDefaultReceiverHeightM;
    std::map<std::string, std::vector<double>> layers;  // cell_id -> rows x cols dBm

    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
    double& at(const std::string& cell_id, int r, int c) { return layers.at(cell_id)[static_cast<std::size_t>(r) * cols + c]; }

    /// Cell center, clamped into the bbox for partial border cells.
    Vec2 center(int r, int c) const {
        return {std::min(bbox.x_min + (c + 0.5) * resolution_m, bbox.x_max),
                std::max(bbox.y_max - (r + 0.5) * resolution_m, bbox.y_min)};
    }
};

inline REMGrid make_rem_grid(const Rect& bbox, double resolution_m, double rx_height_m = kDefaultReceiverHeightM) {
    if (!(resolution_m > 0.0) || !std::isfinite(resolution_m)) throw ValidationError("REM resolution must be > 0");
    if (!(rx_height_m > 0.0)) throw ValidationError("REM receiver height must be > 0");
    REMGrid g;
    g.bbox = bbox;
    g.resolution_m = resolution_m;
    g.rx_height_m = rx_height_m;
    g.rows = static_cast<int>(std::ceil(bbox.height() / resolution_m - 1e-9));
    g.cols = static_cast<int>(std::ceil(bbox.width() / resolution_m - 1e-9));
    if (g.rows < 1 || g.cols < 1) throw ValidationError("REM grid is empty");
    return g;
}

inline std::vector<LocalPoint> rem_points(const REMGrid& g, const Scenario& s) {
    std::vector<LocalPoint> out;
    out.reserve(g.size());
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const Vec2 p = g.center(r, c);
            out.push_back({p.x, p.y, s.ground_z(p.x, p.y) + g.rx_height_m});
        }
    return out;
}

inline bool inside_any_building(const Scenario& s, const Vec2& p) {
    for (const auto& b : s.buildings())
        if (b.bounds().contains(p.x, p.y) && point_in_polygon_strict(p, b.footprint)) return true;
    return false;
}

/// Adds (or replaces) the layer of `cell` using `predictor`.
inline void generate_rem(REMGrid& g, const Scenario& s, const Predictor& predictor, const Cell& cell,
                         bool outdoor_only = false, unsigned jobs = 1) {
    detail::require_eirp(cell);
    const auto points = rem_points(g, s);
    std::vector<LocalPoint> eval;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (outdoor_only && inside_any_building(s, points[i].xy())) continue;
        eval.push_back(points[i]);
        where.push_back(i);
    }
    const auto values = predictor.predict(s, cell, eval, jobs);
    std::vector<double> layer(g.size(), kNoCoverage);
    for (std::size_t k = 0; k < where.size(); ++k) layer[where[k]] = values[k];
    g.layers[cell.id] = std::move(layer);
}

inline REMGrid generate_rem(const Scenario& s, const Predictor& predictor, std::span<const std::string> cell_ids,
                            double resolution_m, double rx_height_m = kDefaultReceiverHeightM, bool outdoor_only = false,
                            unsigned jobs = 1) {
    REMGrid g = make_rem_grid(s.bbox(), resolution_m, rx_height_m);
    for (const auto& id : cell_ids) generate_rem(g, s, predictor, s.cell(id), outdoor_only, jobs);
    return g;
}

/// Per-operator strongest layer and the operator argmax across the grid.
struct BestServerMap {
    std::map<std::string, std::vector<double>> mno_rsrp;          // mno -> best RSRP
    std::map<std::string, std::vector<std::string>> mno_serving;  // mno -> serving cell_id
    std::vector<std::string> best_mno;                            // per grid cell, "" where uncovered
};

inline BestServerMap best_server(const REMGrid& g, const std::map<std::string, std::vector<std::string>>& groups) {
    if (groups.empty()) throw DomainError("best-server aggregation needs at least one operator");
    BestServerMap out;
    std::vector<std::string> best_cell(g.size());
    std::vector<double> best_value(g.size(), -std::numeric_limits<double>::infinity());
    out.best_mno.assign(g.size(), "");
    for (const auto& [mno, ids] : groups) {
        if (ids.empty()) throw DomainError("operator '" + mno + "' has no cells");
        std::vector<std::string> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        auto& value = out.mno_rsrp[mno];
        auto& serving = out.mno_serving[mno];
        value.assign(g.size(), kNoCoverage);
        serving.assign(g.size(), "");
        for (const auto& id : sorted) {
            const auto it = g.layers.find(id);
            if (it == g.layers.end()) throw ConsistencyError("REM has no layer for cell '" + id + "'");
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = it->second[i];
                if (std::isnan(v)) continue;
                if (serving[i].empty() || v > value[i]) {
                    value[i] = v;
                    serving[i] = id;
                }
            }
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (serving[i].empty()) continue;
            const bool better = out.best_mno[i].empty() || value[i] > best_value[i] ||
                                (value[i] == best_value[i] && serving[i] < best_cell[i]);
            if (better) {
                best_value[i] = value[i];
                best_cell[i] = serving[i];
                out.best_mno[i] = mno;
            }
        }
    }
    return out;
}

struct EvalReport {
    double rmse_db = 0.0;
    double mae_db = 0.0;
    double bias_db = 0.0;  // mean of prediction - measurement
    std::vector<double> abs_error_ecdf;
    std::size_t n = 0;
};

inline EvalReport evaluate(std::span<const double> predictions, std::span<const double> measurements) {
    if (predictions.size() != measurements.size())
        throw ShapeError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(measurements.size()) + " measurements");
    if (predictions.empty()) throw InsufficientDataError("evaluate needs at least one prediction");
    EvalReport r;
    r.n = predictions.size();
    double se = 0.0, ae = 0.0, e_sum = 0.0;
    r.abs_error_ecdf.reserve(r.n);
    for (std::size_t i = 0; i < r.n; ++i) {
        const double e = predictions[i] - measurements[i];
        if (!std::isfinite(e)) throw NumericError("non-finite prediction error at index " + std::to_string(i));
        se += e * e;
        ae += std::abs(e);
        e_sum += e;
        r.abs_error_ecdf.push_back(std::abs(e));
    }
    const double n = static_cast<double>(r.n);
    r.rmse_db = std::sqrt(se / n);
    r.mae_db = ae / n;
    r.bias_db = e_sum / n;
    std::sort(r.abs_error_ecdf.begin(), r.abs_error_ecdf.end());
    return r;
}

// ---- exports ----

inline std::string rem_csv(const REMGrid& g, const Scenario& s) {
    std::string out = "x_m,y_m,lat,lon";
    for (const auto& [id, layer] : g.layers) out += ",rsrp_" + id;
    out += "\n";
    char buf[128];
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const Vec2 p = g.center(r, c);
            const GeoPoint geo = unproject({p.x, p.y, 0.0}, s.projection());
            std::snprintf(buf, sizeof buf, "%.3f,%.3f,%.9f,%.9f", p.x, p.y, geo.lat, geo.lon);
            out += buf;
            for (const auto& [id, layer] : g.layers) {
                const double v = layer[static_cast<std::size_t>(r) * g.cols + c];
                if (std::isnan(v)) {
                    out += ",nan";
                } else {
                    std::snprintf(buf, sizeof buf, ",%.3f", v);
                    out += buf;
                }
            }
            out += "\n";
        }
    return out;
}

/// Binary PGM, intensity = round(clamp((rsrp + 140) / 80, 0, 1) * 255); uncovered cells are 0.
inline std::string heatmap_pgm(const REMGrid& g, const std::vector<double>& layer) {
    if (layer.size() != g.size()) throw ShapeError("layer size does not match the REM grid");
    std::vector<unsigned char> bytes(layer.size());
    for (std::size_t i = 0; i < layer.size(); ++i)
        bytes[i] = std::isnan(layer[i]) ? 0 : io::unit_to_byte((layer[i] + 140.0) / 80.0);
    return io::encode_pgm(g.cols, g.rows, bytes, "intensity = round(clamp((rsrp_dbm + 140) / 80, 0, 1) * 255)");
}

inline std::string best_server_csv(const REMGrid& g, const BestServerMap& m) {
    std::string out = "row,col,best_mno";
    for (const auto& [mno, v] : m.mno_rsrp) out += ",rsrp_" + mno + ",cell_" + mno;
    out += "\n";
    char buf[64];
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * g.cols + c;
            out += std::to_string(r) + "," + std::to_string(c) + "," + m.best_mno[i];
            for (const auto& [mno, v] : m.mno_rsrp) {
                if (std::isnan(v[i]))
                    out += ",nan,";
                else {
                    std::snprintf(buf, sizeof buf, ",%.3f,", v[i]);
                    out += buf + m.mno_serving.at(mno)[i];
                }
            }
            out += "\n";
        }
    return out;
}

inline std::string ecdf_csv(const EvalReport& r) {
    std::string out = "abs_error_db,cum_probability\n";
    char buf[64];
    for (std::size_t i = 0; i < r.abs_error_ecdf.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", r.abs_error_ecdf[i], static_cast<double>(i + 1) / r.n);
        out += buf;
    }
    return out;
}

}  // namespace dragon
