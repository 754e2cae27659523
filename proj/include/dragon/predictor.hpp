#pragma once

#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dragon/channels.hpp"
#include "dragon/errors.hpp"
#include "dragon/features.hpp"
#include "dragon/geo.hpp"
#include "dragon/neural/checkpoint.hpp"
#include "dragon/neural/train.hpp"

namespace dragon {

/// RSRP at receiver positions for one cell. Implementations are immutable and
/// safe to call concurrently.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::string name() const = 0;
    virtual std::vector<double> predict(const Scenario& s, const Cell& cell, std::span<const LocalPoint> rx,
                                        unsigned jobs = 1) const = 0;
};

namespace detail {

template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& body) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    const std::size_t chunk = (n + jobs - 1) / jobs;
    for (unsigned j = 0; j < jobs; ++j)
        pool.emplace_back([&, j] {
            try {
                for (std::size_t i = j * chunk; i < std::min(n, (j + 1) * chunk); ++i) body(i);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline void require_eirp(const Cell& cell) {
    if (!cell.eirp_dbm) throw MissingPrerequisiteError("cell '" + cell.id + "' has no fitted EIRP; run fit-eirp first");
}

}  // namespace detail

/// Link budget with an analytical path-loss model and zero correction.
class AnalyticalPredictor final : public Predictor {
public:
    explicit AnalyticalPredictor(ModelKind kind, ChannelParams params = {}) : kind_(kind), params_(params) {
        validate(params_);
    }
    std::string name() const override { return std::string(to_string(kind_)); }
    ModelKind kind() const { return kind_; }

    double predict_one(const Scenario& s, const Cell& cell, const LocalPoint& rx) const {
        detail::require_eirp(cell);
        const double loss = model_loss(kind_, cell, link_geometry(s, cell, rx), params_);
        return rsrp({*cell.eirp_dbm, loss, 0.0, n_prb_from_bandwidth(cell.bandwidth_mhz)});
    }

    std::vector<double> predict(const Scenario& s, const Cell& cell, std::span<const LocalPoint> rx,
                                unsigned jobs = 1) const override {
        detail::require_eirp(cell);
        std::vector<double> out(rx.size());
        detail::parallel_for(rx.size(), jobs, [&](std::size_t i) { out[i] = predict_one(s, cell, rx[i]); });
        return out;
    }

private:
    ModelKind kind_;
    ChannelParams params_;
};

/// UMa B link budget corrected by the trained network.
class DragonPredictor final : public Predictor {
public:
    explicit DragonPredictor(nn::ModelCheckpoint checkpoint, ChannelParams params = {})
        : checkpoint_(std::move(checkpoint)), params_(params) {
        nn::build_network(checkpoint_);
    }
    std::string name() const override { return "dragon"; }
    const nn::ModelCheckpoint& checkpoint() const { return checkpoint_; }

    /// Corrections for already extracted samples.
    std::vector<double> corrections(std::span<const Sample> samples) const {
        auto net = nn::build_network(checkpoint_);
        return nn::predict_corrections(net, checkpoint_, samples);
    }

    /// RSRP for already extracted samples.
    std::vector<double> predict_samples(const Scenario& s, std::span<const Sample> samples) const {
        const auto dl = corrections(samples);
        std::vector<double> out(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Cell& cell = s.cell(samples[i].cell_id);
            detail::require_eirp(cell);
            out[i] = predicted_rsrp(samples[i], cell, dl[i]);
        }
        return out;
    }

    std::vector<double> predict(const Scenario& s, const Cell& cell, std::span<const LocalPoint> rx,
                                unsigned jobs = 1) const override {
        detail::require_eirp(cell);
        std::vector<Sample> samples(rx.size());
        detail::parallel_for(rx.size(), jobs, [&](std::size_t i) { samples[i] = extract_sample(s, cell, rx[i], params_); });
        return predict_samples(s, samples);
    }

private:
    nn::ModelCheckpoint checkpoint_;
    ChannelParams params_;
};

}  // namespace dragon
