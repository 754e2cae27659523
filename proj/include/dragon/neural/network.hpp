#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "dragon/errors.hpp"
#include "dragon/neural/layers.hpp"
#include "dragon/neural/tensor.hpp"
#include "dragon/random.hpp"

namespace dragon::nn {

/// Hyperparameters of the three sub-networks. Defaults are the published final configuration.
struct ArchitectureConfig {
    std::vector<int> cnn_filters{32, 16, 16, 16, 10, 1};
    std::vector<int> kernels{5, 3, 3, 3, 3, 2};
    std::vector<int> pools{2, 2, 2, 2, 2, 2};
    int padding = 3;
    int stride = 1;
    int dilation = 1;
    std::vector<int> feature_nn{256, 128, 64, 32};
    std::vector<int> prediction_nn{16};
    int cnn_flatten_out = 32;
    int input_channels = 1;
    int input_height = 128;
    int input_width = 64;
    int input_features = 10;

    friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ArchitectureConfig& a) {
    j = {{"cnn_filters", a.cnn_filters},     {"kernels", a.kernels},
         {"pools", a.pools},                 {"padding", a.padding},
         {"stride", a.stride},               {"dilation", a.dilation},
         {"feature_nn", a.feature_nn},       {"prediction_nn", a.prediction_nn},
         {"cnn_flatten_out", a.cnn_flatten_out}, {"input_channels", a.input_channels},
         {"input_height", a.input_height},   {"input_width", a.input_width},
         {"input_features", a.input_features}};
}

inline void from_json(const nlohmann::json& j, ArchitectureConfig& a) {
    a.cnn_filters = j.at("cnn_filters").get<std::vector<int>>();
    a.kernels = j.at("kernels").get<std::vector<int>>();
    a.pools = j.at("pools").get<std::vector<int>>();
    a.padding = j.at("padding");
    a.stride = j.at("stride");
    a.dilation = j.at("dilation");
    a.feature_nn = j.at("feature_nn").get<std::vector<int>>();
    a.prediction_nn = j.at("prediction_nn").get<std::vector<int>>();
    a.cnn_flatten_out = j.at("cnn_flatten_out");
    a.input_channels = j.at("input_channels");
    a.input_height = j.at("input_height");
    a.input_width = j.at("input_width");
    a.input_features = j.at("input_features");
}

struct BlockShape {
    int channels, height, width;
    friend bool operator==(const BlockShape&, const BlockShape&) = default;
};

/// Pooled output shape of every convolutional block.
inline std::vector<BlockShape> conv_shape_chain(const ArchitectureConfig& a) {
    std::vector<BlockShape> out;
    int h = a.input_height, w = a.input_width;
    for (std::size_t i = 0; i < a.cnn_filters.size(); ++i) {
        h = (h + 2 * a.padding - a.kernels[i] + 1) / a.pools[i];
        w = (w + 2 * a.padding - a.kernels[i] + 1) / a.pools[i];
        out.push_back({a.cnn_filters[i], h, w});
    }
    return out;
}

inline void validate(const ArchitectureConfig& a) {
    if (a.cnn_filters.empty() || a.cnn_filters.size() != a.kernels.size() || a.kernels.size() != a.pools.size())
        throw ValidationError("cnn_filters, kernels and pools must have equal, non-zero length");
    if (a.stride != 1 || a.dilation != 1) throw ValidationError("only stride 1 and dilation 1 are supported");
    for (int p : a.pools)
        if (p != 2) throw ValidationError("only 2 x 2 max pooling is supported");
    auto positive = [](const std::vector<int>& v) {
        for (int x : v)
            if (x < 1) return false;
        return true;
    };
    if (!positive(a.cnn_filters) || !positive(a.kernels) || !positive(a.feature_nn) || !positive(a.prediction_nn) ||
        a.feature_nn.empty() || a.padding < 0 || a.cnn_flatten_out < 1 || a.input_channels < 1 ||
        a.input_height < 1 || a.input_width < 1 || a.input_features < 1)
        throw ValidationError("architecture sizes must be >= 1");
    for (const auto& s : conv_shape_chain(a))
        if (s.height < 1 || s.width < 1) throw ValidationError("convolutional chain collapses to an empty map");
}

/// Convolutional path (fused conv -> ReLU -> batchnorm -> pool blocks, linear flatten),
/// feature path (linear -> ReLU -> batchnorm blocks) and prediction path
/// (linear -> ReLU blocks, then linear -> 1) over the concatenated branch outputs.
template <typename T>
class DragonNet {
public:
    explicit DragonNet(ArchitectureConfig arch) : arch_(std::move(arch)) {
        validate(arch_);
        int channels = arch_.input_channels;
        for (std::size_t i = 0; i < arch_.cnn_filters.size(); ++i) {
            const std::string p = "cnn." + std::to_string(i);
            auto block = std::make_unique<ConvBlock<T>>(p, channels, arch_.cnn_filters[i], arch_.kernels[i],
                                                        arch_.padding);
            if (i == 0) block->set_propagate_input_grad(false);
            cnn_.push_back(std::move(block));
            channels = arch_.cnn_filters[i];
        }
        const BlockShape last = conv_shape_chain(arch_).back();
        cnn_.push_back(std::make_unique<Linear<T>>("cnn.flatten", last.channels * last.height * last.width,
                                                   arch_.cnn_flatten_out));
        int width = arch_.input_features;
        for (std::size_t i = 0; i < arch_.feature_nn.size(); ++i) {
            const std::string p = "feat." + std::to_string(i);
            feat_.push_back(std::make_unique<Linear<T>>(p + ".linear", width, arch_.feature_nn[i]));
            feat_.push_back(std::make_unique<ReLU<T>>(p + ".relu"));
            feat_.push_back(std::make_unique<BatchNorm<T>>(p + ".bn", arch_.feature_nn[i]));
            width = arch_.feature_nn[i];
        }
        width += arch_.cnn_flatten_out;
        for (std::size_t i = 0; i < arch_.prediction_nn.size(); ++i) {
            const std::string p = "pred." + std::to_string(i);
            pred_.push_back(std::make_unique<Linear<T>>(p + ".linear", width, arch_.prediction_nn[i]));
            pred_.push_back(std::make_unique<ReLU<T>>(p + ".relu"));
            width = arch_.prediction_nn[i];
        }
        pred_.push_back(std::make_unique<Linear<T>>("pred.out", width, 1));
    }

    const ArchitectureConfig& architecture() const { return arch_; }

    /// Kaiming-uniform (fan-in) weights, zero biases, unit batchnorm scale.
    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        for (auto* layer : all_layers()) {
            if (auto* block = dynamic_cast<ConvBlock<T>*>(layer)) {
                const auto& s = block->weight().shape;
                kaiming(block->weight(), s[1] * s[2] * s[3], rng);
                std::fill(block->bias().value.begin(), block->bias().value.end(), T(0));
                reset_norm(*block);
            } else if (auto* lin = dynamic_cast<Linear<T>*>(layer)) {
                kaiming(lin->weight(), lin->in_features(), rng);
                std::fill(lin->bias().value.begin(), lin->bias().value.end(), T(0));
            } else if (auto* bn = dynamic_cast<BatchNorm<T>*>(layer)) {
                reset_norm(*bn);
            }
        }
    }

    /// images: N x C x H x W, features: N x F (normalized). Returns N x 1.
    Tensor<T> forward(const Tensor<T>& images, const Tensor<T>& features, bool training) {
        if (images.shape.size() != 4 || images.dim(1) != arch_.input_channels ||
            images.dim(2) != arch_.input_height || images.dim(3) != arch_.input_width)
            throw ShapeError("image batch " + shape_string(images.shape) + " does not match architecture input");
        if (features.shape.size() != 2 || features.dim(1) != arch_.input_features)
            throw ShapeError("feature batch " + shape_string(features.shape) + " does not match architecture input");
        if (images.dim(0) != features.dim(0)) throw ShapeError("image and feature batch sizes differ");
        Tensor<T> a = run(cnn_, images, training);
        Tensor<T> b = run(feat_, features, training);
        const int n = images.dim(0), wa = arch_.cnn_flatten_out, wb = static_cast<int>(b.stride0());
        Tensor<T> joined({n, wa + wb});
        for (int i = 0; i < n; ++i) {
            std::copy_n(a.data() + static_cast<std::size_t>(i) * wa, wa, joined.data() + static_cast<std::size_t>(i) * (wa + wb));
            std::copy_n(b.data() + static_cast<std::size_t>(i) * wb, wb,
                        joined.data() + static_cast<std::size_t>(i) * (wa + wb) + wa);
        }
        return run(pred_, joined, training);
    }

    struct InputGrads {
        Tensor<T> images;  // empty: the first convolution does not propagate
        Tensor<T> features;
    };

    /// Backpropagates dLoss/dOutput (N x 1) and accumulates parameter gradients.
    InputGrads backward(const Tensor<T>& grad_out) {
        Tensor<T> g = grad_out;
        for (auto it = pred_.rbegin(); it != pred_.rend(); ++it) g = (*it)->backward(g);
        const int n = g.dim(0), wa = arch_.cnn_flatten_out, wb = static_cast<int>(g.stride0()) - wa;
        Tensor<T> ga({n, wa}), gb({n, wb});
        for (int i = 0; i < n; ++i) {
            std::copy_n(g.data() + static_cast<std::size_t>(i) * (wa + wb), wa, ga.data() + static_cast<std::size_t>(i) * wa);
            std::copy_n(g.data() + static_cast<std::size_t>(i) * (wa + wb) + wa, wb, gb.data() + static_cast<std::size_t>(i) * wb);
        }
        InputGrads out;
        for (auto it = feat_.rbegin(); it != feat_.rend(); ++it) gb = (*it)->backward(gb);
        out.features = std::move(gb);
        for (auto it = cnn_.rbegin(); it != cnn_.rend(); ++it) {
            ga = (*it)->backward(ga);
            check_finite(ga.values, (*it)->name(), "gradient");
        }
        out.images = std::move(ga);
        for (auto* p : parameters()) check_finite(p->grad, p->name, "gradient");
        return out;
    }

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        for (auto* l : all_layers())
            for (auto* p : l->parameters()) out.push_back(p);
        return out;
    }

    std::vector<Parameter<T>*> buffers() {
        std::vector<Parameter<T>*> out;
        for (auto* l : all_layers())
            for (auto* p : l->buffers()) out.push_back(p);
        return out;
    }

    /// Parameters and buffers, in a fixed order.
    std::vector<Parameter<T>*> state() {
        auto out = parameters();
        for (auto* b : buffers()) out.push_back(b);
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    std::vector<Layer<T>*> all_layers() {
        std::vector<Layer<T>*> out;
        for (auto* seq : {&cnn_, &feat_, &pred_})
            for (auto& l : *seq) out.push_back(l.get());
        return out;
    }

    /// Shapes after each pooled conv block for a given input; used by shape checks.
    std::vector<std::vector<int>> trace_conv_shapes(const Tensor<T>& images) {
        std::vector<std::vector<int>> out;
        Tensor<T> a = images;
        for (auto& l : cnn_) {
            a = l->forward(a, false);
            if (l->kind() == "convblock") out.push_back(a.shape);
        }
        return out;
    }

private:
    static void check_finite(const Buffer<T>& v, const std::string& layer, const char* what) {
        if (!all_finite(v)) throw NumericError(std::string("non-finite ") + what + " in layer " + layer);
    }

    static Tensor<T> run(std::vector<std::unique_ptr<Layer<T>>>& seq, Tensor<T> x, bool training) {
        for (auto& l : seq) {
            x = l->forward(x, training);
            check_finite(x.values, l->name(), "activation");
        }
        return x;
    }

    template <typename L>
    static void reset_norm(L& l) {
        std::fill(l.gamma().value.begin(), l.gamma().value.end(), T(1));
        std::fill(l.beta().value.begin(), l.beta().value.end(), T(0));
        std::fill(l.running_mean().value.begin(), l.running_mean().value.end(), T(0));
        std::fill(l.running_var().value.begin(), l.running_var().value.end(), T(1));
    }

    static void kaiming(Parameter<T>& p, int fan_in, Rng& rng) {
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
    }

    ArchitectureConfig arch_;
    std::vector<std::unique_ptr<Layer<T>>> cnn_, feat_, pred_;
};

}  // namespace dragon::nn
