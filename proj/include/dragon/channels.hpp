#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dragon/errors.hpp"
#include "dragon/geo.hpp"
#include "dragon/log.hpp"
#include "dragon/raypath.hpp"

namespace dragon {

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr int kSubcarriersPerPrb = 12;

enum class LosMode { geometric, probabilistic_expected };

/// Model configuration shared by the analytical predictors.
struct ChannelParams {
    LosMode los_mode = LosMode::geometric;
    double shadowing_beta_db_per_wall = 9.0;
    double shadowing_gamma_db_per_m = 0.4;
    double nakagami_m = 2.0;
    std::uint64_t rng_seed = 0;
};

inline void validate(const ChannelParams& p) {
    if (p.shadowing_beta_db_per_wall < 0.0 || p.shadowing_gamma_db_per_m < 0.0)
        throw DomainError("shadowing coefficients must be >= 0");
    if (!(p.nakagami_m >= 0.5)) throw DomainError("Nakagami shape m must be >= 0.5");
}

inline double friis(double d_m, double freq_mhz) {
    if (!(d_m > 0.0)) throw DomainError("Friis distance must be > 0");
    if (!(freq_mhz > 0.0)) throw DomainError("frequency must be > 0");
    return 20.0 * std::log10(4.0 * std::numbers::pi * d_m * freq_mhz * 1e6 / kSpeedOfLight);
}

/// Crossover distance of the two-ray model, 4*pi*h_tx*h_rx/lambda.
inline double two_ray_crossover(double freq_mhz, double h_tx_m, double h_rx_m) {
    const double lambda = kSpeedOfLight / (freq_mhz * 1e6);
    return 4.0 * std::numbers::pi * h_tx_m * h_rx_m / lambda;
}

/// Free space up to the crossover distance (inclusive), fourth-power law beyond.
inline double two_ray_ground(double d_m, double freq_mhz, double h_tx_m, double h_rx_m) {
    if (!(d_m > 0.0) || !(freq_mhz > 0.0) || !(h_tx_m > 0.0) || !(h_rx_m > 0.0))
        throw DomainError("two-ray inputs must be positive");
    if (d_m <= two_ray_crossover(freq_mhz, h_tx_m, h_rx_m)) return friis(d_m, freq_mhz);
    return 40.0 * std::log10(d_m) - 20.0 * std::log10(h_tx_m * h_rx_m);
}

/// Unit-mean-power fading leaves the mean loss unchanged.
inline double nakagami_mean(double base_loss_db) { return base_loss_db; }

/// Draws a power gain g ~ Gamma(m, 1/m) and returns base - 10 log10(g).
template <typename Rng>
double nakagami_sample(double base_loss_db, double m, Rng& rng) {
    if (!(m >= 0.5)) throw DomainError("Nakagami shape m must be >= 0.5");
    std::gamma_distribution<double> gain(m, 1.0 / m);
    return base_loss_db - 10.0 * std::log10(gain(rng));
}

namespace detail {
inline double clamp_warn(double v, double lo, double hi, const char* what) {
    if (v < lo || v > hi) {
        const double c = std::clamp(v, lo, hi);
        // Heights above ground come out of subtractions; rounding noise at a bound is not worth a warning.
        if (std::abs(v - c) <= 1e-9 * std::max(1.0, std::abs(c))) return c;
        log::warn(std::string(what) + " " + std::to_string(v) + " outside validity range, clamped to " +
                  std::to_string(c));
        return c;
    }
    return v;
}
}  // namespace detail

/// 3GPP TR 38.901 UMa breakpoint distance with a 1 m effective environment height.
inline double uma_breakpoint(double freq_ghz, double h_bs_m, double h_ut_m) {
    return 4.0 * (h_bs_m - 1.0) * (h_ut_m - 1.0) * freq_ghz * 1e9 / kSpeedOfLight;
}

/// 3GPP TR 38.901 urban-macro path loss. Out-of-range d_2d and h_ut are clamped
/// with a warning; the slant distance keeps its vertical component.
inline double uma_b(double d_2d_m, double d_3d_m, double freq_ghz, double h_bs_m, double h_ut_m, bool los) {
    if (!(d_2d_m > 0.0) || !(d_3d_m > 0.0)) throw DomainError("UMa distances must be > 0");
    if (!(freq_ghz > 0.0) || !(h_bs_m > 0.0) || !(h_ut_m > 0.0)) throw DomainError("UMa inputs must be positive");
    const double vertical2 = std::max(0.0, d_3d_m * d_3d_m - d_2d_m * d_2d_m);
    const double d2 = detail::clamp_warn(d_2d_m, 10.0, 5000.0, "UMa d_2d");
    const double h_ut = detail::clamp_warn(h_ut_m, 1.5, 22.5, "UMa h_ut");
    const double d3 = d2 == d_2d_m ? std::max(d_3d_m, d2) : std::sqrt(d2 * d2 + vertical2);

    const double d_bp = uma_breakpoint(freq_ghz, h_bs_m, h_ut);
    const double f_term = 20.0 * std::log10(freq_ghz);
    double pl_los;
    if (d2 <= d_bp)
        pl_los = 28.0 + 22.0 * std::log10(d3) + f_term;
    else
        pl_los = 28.0 + 40.0 * std::log10(d3) + f_term - 9.0 * std::log10(d_bp * d_bp + (h_bs_m - h_ut) * (h_bs_m - h_ut));
    if (los) return pl_los;
    const double pl_nlos = 13.54 + 39.08 * std::log10(d3) + f_term - 0.6 * (h_ut - 1.5);
    return std::max(pl_los, pl_nlos);
}

/// 3GPP TR 38.901 UMa line-of-sight probability.
inline double uma_los_probability(double d_2d_m, double h_ut_m) {
    if (!(d_2d_m >= 0.0)) throw DomainError("d_2d must be >= 0");
    if (d_2d_m <= 18.0) return 1.0;
    const double c = h_ut_m <= 13.0 ? 0.0 : std::pow((h_ut_m - 13.0) / 10.0, 1.5);
    const double base = 18.0 / d_2d_m + std::exp(-d_2d_m / 63.0) * (1.0 - 18.0 / d_2d_m);
    return base * (1.0 + c * 1.25 * std::pow(d_2d_m / 100.0, 3.0) * std::exp(-d_2d_m / 150.0));
}

/// Expected UMa loss p * PL_LOS + (1 - p) * PL_NLOS, without consulting geometry.
inline double uma_b_expected(double d_2d_m, double d_3d_m, double freq_ghz, double h_bs_m, double h_ut_m) {
    const double p = uma_los_probability(std::max(d_2d_m, 0.0), h_ut_m);
    return p * uma_b(d_2d_m, d_3d_m, freq_ghz, h_bs_m, h_ut_m, true) +
           (1.0 - p) * uma_b(d_2d_m, d_3d_m, freq_ghz, h_bs_m, h_ut_m, false);
}

/// WINNER II C2 (typical urban macro) NLOS path loss, D1.1.2 coefficients.
/// d is clamped to the model's validity range [50, 5000] m with a warning.
inline double winner_c2_nlos(double d_m, double freq_ghz, double h_bs_m, double /*h_ut_m*/ = 1.5) {
    if (!(d_m > 0.0) || !(h_bs_m > 0.0) || !(freq_ghz > 0.0)) throw DomainError("WINNER II inputs must be positive");
    const double d = detail::clamp_warn(d_m, 50.0, 5000.0, "WINNER II C2 distance");
    const double lh = std::log10(h_bs_m);
    return (44.9 - 6.55 * lh) * std::log10(d) + 34.46 + 5.83 * lh + 23.0 * std::log10(freq_ghz / 5.0);
}

/// Per-wall and per-meter excess loss; each penetration run has an entry and an exit wall.
inline double obstacle_shadowing(double base_loss_db, const PathProfile& profile, const ChannelParams& params) {
    const int walls = 2 * profile.n_obs;
    return base_loss_db + params.shadowing_beta_db_per_wall * walls + params.shadowing_gamma_db_per_m * profile.d_obs;
}

inline int n_prb_from_bandwidth(double bandwidth_mhz) {
    static constexpr std::pair<double, int> table[] = {{1.4, 6}, {3.0, 15}, {5.0, 25}, {10.0, 50}, {15.0, 75}, {20.0, 100}};
    for (const auto& [bw, prb] : table)
        if (std::abs(bw - bandwidth_mhz) < 1e-9) return prb;
    throw DomainError("unsupported LTE bandwidth " + std::to_string(bandwidth_mhz) + " MHz");
}

struct LinkBudget {
    double eirp_dbm = 0.0;
    double path_loss_db = 0.0;
    double correction_db = 0.0;
    int n_prb = 100;
    int n_sc = kSubcarriersPerPrb;
};

inline double prb_spreading_db(int n_prb, int n_sc = kSubcarriersPerPrb) {
    return 10.0 * std::log10(static_cast<double>(n_prb) * n_sc);
}

/// RSRP = EIRP - 10 log10(N_PRB * N_SC) - L + dL.
inline double rsrp(const LinkBudget& b) {
    return b.eirp_dbm - prb_spreading_db(b.n_prb, b.n_sc) - b.path_loss_db + b.correction_db;
}

/// Least-squares EIRP: mean of P_RX,i + L_i.
inline double fit_eirp(std::span<const double> received_dbm, std::span<const double> loss_db) {
    if (received_dbm.empty()) throw InsufficientDataError("EIRP fit needs at least one measurement");
    if (received_dbm.size() != loss_db.size()) throw ConsistencyError("received power and loss counts differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < received_dbm.size(); ++i) sum += received_dbm[i] + loss_db[i];
    return sum / static_cast<double>(received_dbm.size());
}

/// Geometry of one cell-to-receiver link.
struct LinkGeometry {
    PathProfile profile;
    double h_bs_m = 0.0;  // above local ground
    double h_ut_m = 0.0;
};

inline LinkGeometry link_geometry(const Scenario& s, const Cell& cell, const LocalPoint& rx) {
    LinkGeometry g;
    g.profile = trace(s, cell.position, rx);
    g.h_bs_m = cell.position.z - s.ground_z(cell.position.x, cell.position.y);
    g.h_ut_m = rx.z - s.ground_z(rx.x, rx.y);
    return g;
}

/// UMa B baseline loss L used by the link budget.
inline double baseline_loss(const Cell& cell, const LinkGeometry& g, const ChannelParams& params) {
    const double f_ghz = cell.freq_mhz / 1000.0;
    const double h_ut = std::max(g.h_ut_m, 1e-3);
    const double d2 = std::max(g.profile.d_2d, 1e-3);
    const double d3 = std::max(g.profile.d_3d, d2);
    if (params.los_mode == LosMode::probabilistic_expected) return uma_b_expected(d2, d3, f_ghz, g.h_bs_m, h_ut);
    return uma_b(d2, d3, f_ghz, g.h_bs_m, h_ut, is_los(g.profile));
}

/// Fits one cell's EIRP from its RSRP measurements against the UMa B baseline.
inline double fit_eirp(std::span<const Measurement> measurements, const Scenario& s, const Cell& cell,
                       const ChannelParams& params) {
    std::vector<double> p_rx, loss;
    const double spread = prb_spreading_db(n_prb_from_bandwidth(cell.bandwidth_mhz));
    for (const auto& m : measurements) {
        if (m.cell_id != cell.id) continue;
        p_rx.push_back(m.rsrp_dbm + spread);
        loss.push_back(baseline_loss(cell, link_geometry(s, cell, m.position), params));
    }
    if (p_rx.empty()) throw InsufficientDataError("no measurements for cell '" + cell.id + "'");
    return fit_eirp(p_rx, loss);
}

enum class ModelKind { friis, two_ray, nakagami, uma_b, winner_c2, obstacle };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::friis: return "friis";
        case ModelKind::two_ray: return "two-ray";
        case ModelKind::nakagami: return "nakagami";
        case ModelKind::uma_b: return "uma-b";
        case ModelKind::winner_c2: return "winner-c2";
        case ModelKind::obstacle: return "obstacle";
    }
    return "?";
}

inline ModelKind model_kind_from(std::string_view name) {
    for (auto k : {ModelKind::friis, ModelKind::two_ray, ModelKind::nakagami, ModelKind::uma_b, ModelKind::winner_c2,
                   ModelKind::obstacle})
        if (to_string(k) == name) return k;
    throw DomainError("unknown channel model '" + std::string(name) + "'");
}

/// Deterministic path loss of an analytical model. Nakagami and obstacle
/// shadowing are applied on top of free-space loss.
inline double model_loss(ModelKind kind, const Cell& cell, const LinkGeometry& g, const ChannelParams& params) {
    const double d3 = std::max(g.profile.d_3d, 1e-3);
    const double d2 = std::max(g.profile.d_2d, 1e-3);
    switch (kind) {
        case ModelKind::friis: return friis(d3, cell.freq_mhz);
        case ModelKind::two_ray:
            return two_ray_ground(d2, cell.freq_mhz, std::max(g.h_bs_m, 1e-3), std::max(g.h_ut_m, 1e-3));
        case ModelKind::nakagami: return nakagami_mean(friis(d3, cell.freq_mhz));
        case ModelKind::uma_b: return baseline_loss(cell, g, params);
        case ModelKind::winner_c2: return winner_c2_nlos(d2, cell.freq_mhz / 1000.0, std::max(g.h_bs_m, 1e-3));
        case ModelKind::obstacle: return obstacle_shadowing(friis(d3, cell.freq_mhz), g.profile, params);
    }
    throw DomainError("unknown channel model");
}

}  // namespace dragon
