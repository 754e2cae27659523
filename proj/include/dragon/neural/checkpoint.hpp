#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "dragon/errors.hpp"
#include "dragon/features.hpp"
#include "dragon/io/base64.hpp"
#include "dragon/io/text.hpp"
#include "dragon/neural/network.hpp"

namespace dragon::nn {

inline constexpr const char* kCheckpointFormat = "dragon-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct TrainMeta {
    std::uint64_t seed = 0;
    int epochs_run = 0;
    int best_epoch = -1;
    std::vector<double> train_loss;  // dB^2 per epoch
    std::vector<double> val_loss;    // dB^2 per epoch
    friend bool operator==(const TrainMeta&, const TrainMeta&) = default;
};

/// Everything needed to rebuild a trained model: architecture, named float32
/// arrays (parameters and batchnorm buffers), feature and target scaling.
struct ModelCheckpoint {
    ArchitectureConfig architecture;
    std::map<std::string, std::vector<float>> weights;
    NormStats norm_stats;
    double target_mean = 0.0;
    double target_std = 1.0;
    TrainMeta train_meta;
    friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

template <typename T>
std::map<std::string, std::vector<float>> export_weights(DragonNet<T>& net) {
    std::map<std::string, std::vector<float>> out;
    for (auto* p : net.state()) out[p->name].assign(p->value.begin(), p->value.end());
    return out;
}

/// Loads named arrays into `net`; every tensor must be present with the right size.
template <typename T>
void import_weights(DragonNet<T>& net, const std::map<std::string, std::vector<float>>& weights) {
    const auto state = net.state();
    if (weights.size() != state.size())
        throw CheckpointError("checkpoint holds " + std::to_string(weights.size()) + " tensors, architecture needs " +
                              std::to_string(state.size()));
    for (auto* p : state) {
        auto it = weights.find(p->name);
        if (it == weights.end()) throw CheckpointError("checkpoint lacks tensor '" + p->name + "'");
        if (it->second.size() != p->value.size())
            throw CheckpointError("tensor '" + p->name + "' has " + std::to_string(it->second.size()) +
                                  " values, architecture needs " + std::to_string(p->value.size()));
    }
    for (auto* p : state) {
        const auto& src = weights.at(p->name);
        std::copy(src.begin(), src.end(), p->value.begin());
    }
}

/// Float network rebuilt from a checkpoint.
inline DragonNet<float> build_network(const ModelCheckpoint& c) {
    DragonNet<float> net(c.architecture);
    import_weights(net, c.weights);
    return net;
}

inline std::string checkpoint_to_json(const ModelCheckpoint& c) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["architecture"] = c.architecture;
    j["norm_stats"] = {{"mean", c.norm_stats.mean},
                       {"std", c.norm_stats.std},
                       {"degenerate", c.norm_stats.degenerate},
                       {"features", kFeatureNames},
                       {"target_mean", c.target_mean},
                       {"target_std", c.target_std}};
    j["train_meta"] = {{"seed", c.train_meta.seed},
                       {"epochs_run", c.train_meta.epochs_run},
                       {"best_epoch", c.train_meta.best_epoch},
                       {"train_loss", c.train_meta.train_loss},
                       {"val_loss", c.train_meta.val_loss}};
    nlohmann::json w = nlohmann::json::object();
    for (const auto& [name, values] : c.weights) w[name] = io::encode_f32(values);
    j["weights"] = std::move(w);
    return j.dump(1) + "\n";
}

/// Parses and validates a checkpoint; nothing is returned unless every tensor checks out.
inline ModelCheckpoint checkpoint_from_json(const std::string& text, const std::string& source = "<checkpoint>") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(source + ": unreadable checkpoint (" + e.what() + ")");
    }
    ModelCheckpoint c;
    try {
        if (j.value("format", std::string()) != kCheckpointFormat)
            throw CheckpointError(source + ": not a DRaGon checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw CheckpointError(source + ": unsupported checkpoint version " + j.at("version").dump());
        c.architecture = j.at("architecture").get<ArchitectureConfig>();
        validate(c.architecture);
        const auto& ns = j.at("norm_stats");
        c.norm_stats.mean = ns.at("mean").get<FeatureVector>();
        c.norm_stats.std = ns.at("std").get<FeatureVector>();
        c.norm_stats.degenerate = ns.at("degenerate").get<std::array<bool, kFeatureCount>>();
        c.target_mean = ns.at("target_mean");
        c.target_std = ns.at("target_std");
        const auto& tm = j.at("train_meta");
        c.train_meta.seed = tm.at("seed");
        c.train_meta.epochs_run = tm.at("epochs_run");
        c.train_meta.best_epoch = tm.at("best_epoch");
        c.train_meta.train_loss = tm.at("train_loss").get<std::vector<double>>();
        c.train_meta.val_loss = tm.at("val_loss").get<std::vector<double>>();
        for (const auto& [name, value] : j.at("weights").items()) c.weights[name] = io::decode_f32(value.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(source + ": malformed checkpoint (" + e.what() + ")");
    } catch (const ParseError& e) {
        throw CheckpointError(source + ": " + e.what());
    } catch (const ValidationError& e) {
        throw CheckpointError(source + ": architecture header rejected: " + e.what());
    }
    if (c.architecture.input_features != static_cast<int>(kFeatureCount))
        throw CheckpointError(source + ": architecture expects " + std::to_string(c.architecture.input_features) +
                              " features, extractor produces " + std::to_string(kFeatureCount));
    if (!(c.target_std > 0.0)) throw CheckpointError(source + ": target_std must be positive");
    DragonNet<float> probe(c.architecture);
    try {
        import_weights(probe, c.weights);
    } catch (const CheckpointError& e) {
        throw CheckpointError(source + ": " + e.what());
    }
    return c;
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::string& path) { io::write_file(path, checkpoint_to_json(c)); }

inline ModelCheckpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(io::read_file(path), path); }

}  // namespace dragon::nn
