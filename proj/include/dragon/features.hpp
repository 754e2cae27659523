#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dragon/channels.hpp"
#include "dragon/errors.hpp"
#include "dragon/geo.hpp"
#include "dragon/imaging.hpp"
#include "dragon/io/base64.hpp"
#include "dragon/io/text.hpp"
#include "dragon/log.hpp"
#include "dragon/random.hpp"
#include "dragon/raypath.hpp"

namespace dragon {

inline constexpr std::size_t kFeatureCount = 10;

/// Fixed order of the numeric feature vector.
enum Feature : std::size_t {
    delta_lon_m,
    delta_lat_m,
    d_3d_m,
    n_obs,
    d_obs_m,
    n_ter,
    d_ter_m,
    bandwidth_mhz,
    freq_mhz,
    eirp_dbm,
};

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "delta_lon_m", "delta_lat_m", "d_3d_m", "n_obs", "d_obs_m", "n_ter", "d_ter_m", "bandwidth_mhz", "freq_mhz", "eirp_dbm"};

using FeatureVector = std::array<double, kFeatureCount>;

struct Sample {
    FeatureVector features{};
    ImagePair images;
    double baseline_loss_db = 0.0;
    std::optional<double> target_delta_db;
    std::string cell_id;
    LocalPoint position;
    std::size_t source_row = 0;  // index of the originating measurement
};

/// Features, images and UMa B baseline (geometric LOS unless configured) for one receiver.
inline Sample extract_sample(const Scenario& s, const Cell& cell, const LocalPoint& rx, const ChannelParams& params = {}) {
    if (!cell.eirp_dbm) throw MissingPrerequisiteError("cell '" + cell.id + "' has no fitted EIRP; run fit-eirp first");
    const LinkGeometry g = link_geometry(s, cell, rx);
    Sample out;
    out.cell_id = cell.id;
    out.position = rx;
    auto& f = out.features;
    f[delta_lon_m] = std::abs(rx.x - cell.position.x);
    f[delta_lat_m] = std::abs(rx.y - cell.position.y);
    f[d_3d_m] = g.profile.d_3d;
    f[n_obs] = g.profile.n_obs;
    f[d_obs_m] = g.profile.d_obs;
    f[n_ter] = g.profile.n_ter;
    f[d_ter_m] = g.profile.d_ter;
    f[bandwidth_mhz] = cell.bandwidth_mhz;
    f[freq_mhz] = cell.freq_mhz;
    f[eirp_dbm] = *cell.eirp_dbm;
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        if (!std::isfinite(f[i])) throw ValidationError(std::string("non-finite feature ") + kFeatureNames[i]);
    out.baseline_loss_db = baseline_loss(cell, g, params);
    out.images = render_pair(s, rx, cell.position);
    return out;
}

/// Link-budget prediction of a sample with a given correction.
inline double predicted_rsrp(const Sample& sample, const Cell& cell, double correction_db) {
    return rsrp({*cell.eirp_dbm, sample.baseline_loss_db, correction_db, n_prb_from_bandwidth(cell.bandwidth_mhz)});
}

/// Correction dL that makes the link budget reproduce the measured RSRP.
inline double compute_target(const Sample& sample, const Measurement& m, const Cell& cell) {
    if (m.cell_id != cell.id || sample.cell_id != cell.id)
        throw ConsistencyError("measurement cell '" + m.cell_id + "' does not match cell '" + cell.id + "'");
    if (!cell.eirp_dbm) throw MissingPrerequisiteError("cell '" + cell.id + "' has no fitted EIRP");
    return m.rsrp_dbm - predicted_rsrp(sample, cell, 0.0);
}

/// Extracts one training sample per measurement; independent of `jobs`.
/// Samples with non-finite features are rejected with a diagnostic.
inline std::vector<Sample> extract_samples(const Scenario& s, std::span<const Measurement> measurements,
                                           const ChannelParams& params = {}, unsigned jobs = 1,
                                           std::span<const std::size_t> source_rows = {}) {
    std::vector<std::optional<Sample>> slots(measurements.size());
    std::vector<std::string> errors(measurements.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            try {
                const Measurement& m = measurements[i];
                const Cell& cell = s.cell(m.cell_id);
                Sample smp = extract_sample(s, cell, m.position, params);
                smp.target_delta_db = compute_target(smp, m, cell);
                smp.source_row = source_rows.empty() ? i : source_rows[i];
                slots[i] = std::move(smp);
            } catch (const ValidationError& e) {
                errors[i] = e.what();
            } catch (const DegenerateError& e) {
                errors[i] = e.what();
            }
        }
    };
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(1, measurements.size()))));
    if (jobs == 1) {
        work(0, measurements.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (measurements.size() + jobs - 1) / jobs;
        for (unsigned j = 0; j < jobs; ++j) {
            const std::size_t b = j * chunk, e = std::min(measurements.size(), b + chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& t : pool) t.join();
    }
    std::vector<Sample> out;
    out.reserve(measurements.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i])
            out.push_back(std::move(*slots[i]));
        else
            log::warn("measurement " + std::to_string(source_rows.empty() ? i : source_rows[i]) +
                      " rejected: " + errors[i]);
    }
    return out;
}

/// Per-feature z-score statistics (population standard deviation).
struct NormStats {
    FeatureVector mean{};
    FeatureVector std{};
    std::array<bool, kFeatureCount> degenerate{};
    friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline NormStats fit_normalization(std::span<const Sample> train) {
    if (train.size() < 2) throw InsufficientDataError("normalization needs at least 2 training samples");
    NormStats st;
    const double n = static_cast<double>(train.size());
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
        double sum = 0.0;
        for (const auto& s : train) sum += s.features[k];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& s : train) ss += (s.features[k] - mean) * (s.features[k] - mean);
        const double sd = std::sqrt(ss / n);
        st.mean[k] = mean;
        if (sd > 1e-12 * (1.0 + std::abs(mean))) {
            st.std[k] = sd;
        } else {
            st.std[k] = 1.0;
            st.degenerate[k] = true;
        }
    }
    return st;
}

inline FeatureVector apply_normalization(const FeatureVector& f, const NormStats& st) {
    FeatureVector out;
    for (std::size_t k = 0; k < kFeatureCount; ++k) out[k] = st.degenerate[k] ? 0.0 : (f[k] - st.mean[k]) / st.std[k];
    return out;
}

inline FeatureVector apply_normalization(const Sample& s, const NormStats& st) {
    return apply_normalization(s.features, st);
}

/// Index partition of a sample list: floor(0.8 N) / floor(0.1 N) / remainder.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::vector<std::size_t> val;
    std::uint64_t seed = 0;
};

inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
    if (n < 10) throw InsufficientDataError("dataset split needs at least 10 samples, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t n_train = n * 8 / 10, n_test = n / 10;
    DatasetSplit split;
    split.seed = seed;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
    split.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test), order.end());
    return split;
}

inline DatasetSplit split_dataset(std::span<const Sample> samples, std::uint64_t seed) {
    return split_dataset(samples.size(), seed);
}

template <typename Index>
std::vector<Sample> gather(std::span<const Sample> samples, const std::vector<Index>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(samples[i]);
    return out;
}

// ---- dataset cache: JSON lines, images as base64 bytes round(v * 254) ----

namespace detail {
inline std::string encode_image(const GrayImage& img) {
    std::vector<std::uint8_t> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 254.0f));
    return io::base64_encode(bytes.data(), bytes.size());
}
inline GrayImage decode_image(const std::string& text) {
    const auto bytes = io::base64_decode(text);
    if (bytes.size() != static_cast<std::size_t>(kImageSize * kImageSize))
        throw ParseError("cached image does not hold 64 x 64 pixels");
    GrayImage img;
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 254.0f;
    return img;
}
}  // namespace detail

inline std::string sample_to_jsonl(const Sample& s) {
    nlohmann::json j;
    j["features"] = s.features;
    j["top"] = detail::encode_image(s.images.top);
    j["side"] = detail::encode_image(s.images.side);
    j["baseline_loss_db"] = s.baseline_loss_db;
    j["target_delta_db"] = s.target_delta_db ? nlohmann::json(*s.target_delta_db) : nlohmann::json(nullptr);
    j["cell_id"] = s.cell_id;
    j["position"] = {s.position.x, s.position.y, s.position.z};
    j["row"] = s.source_row;
    return j.dump();
}

inline std::string write_dataset_cache(std::span<const Sample> samples) {
    std::string out;
    for (const auto& s : samples) out += sample_to_jsonl(s) + "\n";
    return out;
}

inline std::vector<Sample> read_dataset_cache(const std::string& text, const std::string& source = "<dataset>") {
    std::vector<Sample> out;
    const auto rows = io::lines(text);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (io::trim(rows[i]).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(rows[i]);
            Sample s;
            s.features = j.at("features").get<FeatureVector>();
            s.images.top = detail::decode_image(j.at("top").get<std::string>());
            s.images.side = detail::decode_image(j.at("side").get<std::string>());
            s.baseline_loss_db = j.at("baseline_loss_db");
            if (!j.at("target_delta_db").is_null()) s.target_delta_db = j.at("target_delta_db").get<double>();
            s.cell_id = j.at("cell_id").get<std::string>();
            s.position = {j.at("position").at(0), j.at("position").at(1), j.at("position").at(2)};
            s.source_row = j.at("row");
            out.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source + ":" + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace dragon
