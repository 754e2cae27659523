#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dragon/errors.hpp"
#include "dragon/features.hpp"
#include "dragon/imaging.hpp"
#include "dragon/neural/adam.hpp"
#include "dragon/neural/checkpoint.hpp"
#include "dragon/neural/network.hpp"
#include "dragon/random.hpp"

namespace dragon::nn {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 5e-4;
    int batch_size = 128;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int max_epochs = 100;
    int patience = 10;  // <= 0 disables early stopping
    std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
    if (!(c.learning_rate > 0.0) || c.weight_decay < 0.0) throw ValidationError("learning rate must be > 0 and weight decay >= 0");
    if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (c.max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
}

struct TrainResult {
    ModelCheckpoint checkpoint;  // weights of the best validation epoch
    std::vector<double> train_loss;
    std::vector<double> val_loss;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

namespace detail {

template <typename T>
struct Batch {
    Tensor<T> images;
    Tensor<T> features;
};

/// Image pair stacked vertically (top over side) into one channel, features normalized.
template <typename T>
Batch<T> assemble(std::span<const Sample> samples, std::span<const std::size_t> idx, const NormStats& st) {
    const int n = static_cast<int>(idx.size());
    const std::size_t plane = static_cast<std::size_t>(kImageSize) * kImageSize;
    Batch<T> b{Tensor<T>({n, 1, 2 * kImageSize, kImageSize}), Tensor<T>({n, static_cast<int>(kFeatureCount)})};
    for (int i = 0; i < n; ++i) {
        const Sample& s = samples[idx[i]];
        T* img = b.images.data() + static_cast<std::size_t>(i) * 2 * plane;
        std::copy(s.images.top.pixels.begin(), s.images.top.pixels.end(), img);
        std::copy(s.images.side.pixels.begin(), s.images.side.pixels.end(), img + plane);
        const FeatureVector f = apply_normalization(s, st);
        for (std::size_t k = 0; k < kFeatureCount; ++k) b.features[static_cast<std::size_t>(i) * kFeatureCount + k] = static_cast<T>(f[k]);
    }
    return b;
}

/// Consecutive batches over `order`; a trailing batch of one joins the previous one
/// because batch statistics of a single sample are degenerate.
inline std::vector<std::span<const std::size_t>> batches(std::span<const std::size_t> order, int batch_size) {
    std::vector<std::span<const std::size_t>> out;
    const std::size_t bs = static_cast<std::size_t>(batch_size);
    for (std::size_t b = 0; b < order.size(); b += bs) out.push_back(order.subspan(b, std::min(bs, order.size() - b)));
    if (out.size() > 1 && out.back().size() == 1) {
        const auto last = out.back();
        out.pop_back();
        out.back() = std::span<const std::size_t>(out.back().data(), out.back().size() + last.size());
    }
    return out;
}

}  // namespace detail

/// Inference-mode corrections dL in dB for every sample.
inline std::vector<double> predict_corrections(DragonNet<float>& net, const ModelCheckpoint& c,
                                               std::span<const Sample> samples, int batch_size = 256) {
    std::vector<double> out;
    out.reserve(samples.size());
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
        const auto part = std::span<const std::size_t>(idx).subspan(b, std::min<std::size_t>(batch_size, idx.size() - b));
        const auto batch = detail::assemble<float>(samples, part, c.norm_stats);
        const auto y = net.forward(batch.images, batch.features, false);
        for (float v : y.values) out.push_back(c.target_mean + c.target_std * static_cast<double>(v));
    }
    return out;
}

/// Mean squared correction error in dB^2, inference mode.
inline double evaluate_mse(DragonNet<float>& net, const ModelCheckpoint& c, std::span<const Sample> samples) {
    const auto pred = predict_corrections(net, c, samples);
    double ss = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double e = pred[i] - *samples[i].target_delta_db;
        ss += e * e;
    }
    return ss / static_cast<double>(samples.size());
}

/// Minibatch Adam on the MSE of the standardized correction, with seeded per-epoch
/// shuffling and early stopping on validation loss (training loss when `val` is empty).
inline TrainResult train(std::span<const Sample> train_set, std::span<const Sample> val_set, const ArchitectureConfig& arch,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    validate(cfg);
    validate(arch);
    if (train_set.size() < 2) throw InsufficientDataError("training needs at least 2 samples");
    for (auto set : {train_set, val_set})
        for (const auto& s : set)
            if (!s.target_delta_db) throw ValidationError("sample for measurement " + std::to_string(s.source_row) + " has no target");

    TrainResult result;
    ModelCheckpoint& ckpt = result.checkpoint;
    ckpt.architecture = arch;
    ckpt.norm_stats = fit_normalization(train_set);
    double sum = 0.0;
    for (const auto& s : train_set) sum += *s.target_delta_db;
    ckpt.target_mean = sum / static_cast<double>(train_set.size());
    double ss = 0.0;
    for (const auto& s : train_set) ss += (*s.target_delta_db - ckpt.target_mean) * (*s.target_delta_db - ckpt.target_mean);
    const double sd = std::sqrt(ss / static_cast<double>(train_set.size()));
    ckpt.target_std = sd > 1e-6 ? sd : 1.0;
    ckpt.train_meta.seed = cfg.seed;

    DragonNet<float> net(arch);
    net.initialize(cfg.seed);
    Adam<float> opt(net.parameters(), {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay});
    Rng rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    const double scale = ckpt.target_std * ckpt.target_std;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_ss = 0.0;
        try {
            for (auto part : detail::batches(order, cfg.batch_size)) {
                const auto batch = detail::assemble<float>(train_set, part, ckpt.norm_stats);
                const int n = static_cast<int>(part.size());
                net.zero_grad();
                const auto y = net.forward(batch.images, batch.features, true);
                Tensor<float> grad({n, 1});
                for (int i = 0; i < n; ++i) {
                    const double target = (*train_set[part[i]].target_delta_db - ckpt.target_mean) / ckpt.target_std;
                    const double e = static_cast<double>(y[i]) - target;
                    epoch_ss += e * e;
                    grad[i] = static_cast<float>(2.0 * e / n);
                }
                if (!std::isfinite(epoch_ss)) throw NumericError("non-finite loss");
                net.backward(grad);
                opt.step();
            }
        } catch (const NumericError& e) {
            throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
        }
        const double train_loss = epoch_ss / static_cast<double>(train_set.size()) * scale;
        double val_loss = train_loss;
        if (!val_set.empty()) {
            try {
                val_loss = evaluate_mse(net, ckpt, val_set);
            } catch (const NumericError& e) {
                throw TrainingError("validation diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
            }
            if (!std::isfinite(val_loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch + 1));
        }
        result.train_loss.push_back(train_loss);
        result.val_loss.push_back(val_loss);
        if (on_epoch) on_epoch(epoch + 1, train_loss, val_loss);
        if (val_loss < best) {
            best = val_loss;
            since_best = 0;
            ckpt.weights = export_weights(net);
            ckpt.train_meta.best_epoch = epoch + 1;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    ckpt.train_meta.epochs_run = static_cast<int>(result.train_loss.size());
    ckpt.train_meta.train_loss = result.train_loss;
    ckpt.train_meta.val_loss = result.val_loss;
    return result;
}

}  // namespace dragon::nn
