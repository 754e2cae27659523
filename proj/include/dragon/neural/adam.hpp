#pragma once

#include <cmath>
#include <vector>

#include "dragon/errors.hpp"
#include "dragon/neural/tensor.hpp"

namespace dragon::nn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 5e-4;  // L2, added to the gradient
};

/// Adam with L2-coupled weight decay over a fixed parameter list.
template <typename T>
class Adam {
public:
    Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        if (!(cfg_.learning_rate > 0.0) || cfg_.weight_decay < 0.0 || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) ||
            !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) || !(cfg_.epsilon > 0.0))
            throw ValidationError("invalid Adam hyperparameters");
        for (auto* p : params_) {
            m_.emplace_back(p->value.size(), 0.0);
            v_.emplace_back(p->value.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = *params_[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = static_cast<double>(p.grad[i]) + cfg_.weight_decay * static_cast<double>(p.value[i]);
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mh = m[i] / c1, vh = v[i] / c2;
                p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.epsilon));
            }
        }
    }

    long steps() const { return t_; }

private:
    std::vector<Parameter<T>*> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace dragon::nn
