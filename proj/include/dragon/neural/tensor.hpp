#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dragon/errors.hpp"

namespace dragon::nn {

/// Storage aligned to Eigen's widest packet. Eigen peels unaligned heads off
/// vectorized loops and reductions, so unaligned buffers would make the
/// summation order, and hence the rounding, vary between allocations.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major array with an explicit shape (NCHW for images, NF for vectors).
template <typename T>
struct Tensor {
    std::vector<int> shape;
    Buffer<T> values;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)), values(count(shape), fill) {}

    static std::size_t count(const std::vector<int>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    }
    std::size_t size() const { return values.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    T* data() { return values.data(); }
    const T* data() const { return values.data(); }
    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    /// Elements per leading-dimension entry.
    std::size_t stride0() const { return shape.empty() || shape[0] == 0 ? 0 : values.size() / shape[0]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

template <typename T>
bool all_finite(const Buffer<T>& v) {
    for (const T& x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

/// Trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    std::vector<int> shape;
    Buffer<T> value;
    Buffer<T> grad;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> s, T fill = T(0))
        : name(std::move(n)), shape(std::move(s)), value(Tensor<T>::count(shape), fill), grad(value.size(), T(0)) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

}  // namespace dragon::nn
