#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dragon/errors.hpp"
#include "dragon/neural/tensor.hpp"

namespace dragon::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A differentiable stage. forward() caches whatever backward() needs; backward()
/// accumulates parameter gradients and returns the gradient w.r.t. the input.
template <typename T>
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual std::vector<Parameter<T>*> parameters() { return {}; }
    /// Non-trainable state that still belongs in a checkpoint.
    virtual std::vector<Parameter<T>*> buffers() { return {}; }
    virtual std::string kind() const = 0;

    const std::string& name() const { return name_; }

private:
    std::string name_;
};

/// 2-D convolution, stride 1, dilation 1, symmetric zero padding, im2col + GEMM.
template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int padding)
        : Layer<T>(name),
          in_(in_channels),
          out_(out_channels),
          k_(kernel),
          pad_(padding),
          weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
          bias_(name + ".bias", {out_channels}) {}

    std::string kind() const override { return "conv2d"; }
    std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

    /// The first layer of a network never needs its input gradient.
    void set_propagate_input_grad(bool on) { propagate_ = on; }

    int out_height(int h) const { return h + 2 * pad_ - k_ + 1; }
    int out_width(int w) const { return w + 2 * pad_ - k_ + 1; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        if (x.shape.size() != 4 || x.dim(1) != in_)
            throw ShapeError(this->name() + ": expected N x " + std::to_string(in_) + " x H x W input, got " +
                             shape_string(x.shape));
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int ho = out_height(h), wo = out_width(w);
        if (ho < 1 || wo < 1) throw ShapeError(this->name() + ": kernel larger than padded input");
        input_ = x;
        Tensor<T> y({n, out_, ho, wo});
        const int kk = in_ * k_ * k_, hw = ho * wo;
        col_.resize(static_cast<std::size_t>(kk) * hw);
        Eigen::Map<const RowMatrix<T>> wmat(weight_.value.data(), out_, kk);
        Eigen::Map<const RowMatrix<T>> col(col_.data(), kk, hw);
        for (int i = 0; i < n; ++i) {
            im2col(x.data() + static_cast<std::size_t>(i) * in_ * h * w, h, w, ho, wo);
            Eigen::Map<RowMatrix<T>> out(y.data() + static_cast<std::size_t>(i) * out_ * hw, out_, hw);
            out.noalias() = wmat * col;
            for (int c = 0; c < out_; ++c) out.row(c).array() += bias_.value[c];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
        const int ho = out_height(h), wo = out_width(w);
        const int kk = in_ * k_ * k_, hw = ho * wo;
        Tensor<T> dx;
        if (propagate_) dx = Tensor<T>(input_.shape);
        col_.resize(static_cast<std::size_t>(kk) * hw);
        dcol_.resize(static_cast<std::size_t>(kk) * hw);
        Eigen::Map<const RowMatrix<T>> wmat(weight_.value.data(), out_, kk);
        Eigen::Map<RowMatrix<T>> dw(weight_.grad.data(), out_, kk);
        Eigen::Map<const RowMatrix<T>> col(col_.data(), kk, hw);
        Eigen::Map<RowMatrix<T>> dcol(dcol_.data(), kk, hw);
        for (int i = 0; i < n; ++i) {
            Eigen::Map<const RowMatrix<T>> gy(g.data() + static_cast<std::size_t>(i) * out_ * hw, out_, hw);
            im2col(input_.data() + static_cast<std::size_t>(i) * in_ * h * w, h, w, ho, wo);
            dw.noalias() += gy * col.transpose();
            for (int c = 0; c < out_; ++c) bias_.grad[c] += gy.row(c).sum();
            if (propagate_) {
                dcol.noalias() = wmat.transpose() * gy;
                col2im(dx.data() + static_cast<std::size_t>(i) * in_ * h * w, h, w, ho, wo);
            }
        }
        return dx;
    }

private:
    void im2col(const T* src, int h, int w, int ho, int wo) {
        T* dst = col_.data();
        for (int c = 0; c < in_; ++c)
            for (int ki = 0; ki < k_; ++ki)
                for (int kj = 0; kj < k_; ++kj) {
                    const int ox_lo = std::clamp(pad_ - kj, 0, wo), ox_hi = std::clamp(w + pad_ - kj, 0, wo);
                    for (int oy = 0; oy < ho; ++oy, dst += wo) {
                        const int iy = oy + ki - pad_;
                        if (iy < 0 || iy >= h) {
                            std::fill(dst, dst + wo, T(0));
                            continue;
                        }
                        const T* row = src + (static_cast<std::size_t>(c) * h + iy) * w;
                        std::fill(dst, dst + ox_lo, T(0));
                        for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = row[ox + kj - pad_];
                        std::fill(dst + ox_hi, dst + wo, T(0));
                    }
                }
    }

    void col2im(T* dst, int h, int w, int ho, int wo) const {
        const T* src = dcol_.data();
        for (int c = 0; c < in_; ++c)
            for (int ki = 0; ki < k_; ++ki)
                for (int kj = 0; kj < k_; ++kj) {
                    const int ox_lo = std::clamp(pad_ - kj, 0, wo), ox_hi = std::clamp(w + pad_ - kj, 0, wo);
                    for (int oy = 0; oy < ho; ++oy, src += wo) {
                        const int iy = oy + ki - pad_;
                        if (iy < 0 || iy >= h) continue;
                        T* row = dst + (static_cast<std::size_t>(c) * h + iy) * w;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) row[ox + kj - pad_] += src[ox];
                    }
                }
    }

    int in_, out_, k_, pad_;
    bool propagate_ = true;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
    Buffer<T> col_, dcol_;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
    using Layer<T>::Layer;
    std::string kind() const override { return "relu"; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        output_ = x;
        for (auto& v : output_.values) v = v > T(0) ? v : T(0);
        return output_;
    }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!(output_[i] > T(0))) dx[i] = T(0);
        return dx;
    }

private:
    Tensor<T> output_;
};

/// Batch normalization over N (x H x W) per channel. Training uses batch
/// statistics and updates running estimates with momentum 0.1 (unbiased variance).
template <typename T>
class BatchNorm final : public Layer<T> {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm(std::string name, int channels)
        : Layer<T>(name),
          channels_(channels),
          gamma_(name + ".weight", {channels}, T(1)),
          beta_(name + ".bias", {channels}, T(0)),
          running_mean_(name + ".running_mean", {channels}, T(0)),
          running_var_(name + ".running_var", {channels}, T(1)) {}

    std::string kind() const override { return "batchnorm"; }
    std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
    std::vector<Parameter<T>*> buffers() override { return {&running_mean_, &running_var_}; }
    Parameter<T>& gamma() { return gamma_; }
    Parameter<T>& beta() { return beta_; }
    Parameter<T>& running_mean() { return running_mean_; }
    Parameter<T>& running_var() { return running_var_; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        if (x.shape.size() < 2 || x.dim(1) != channels_)
            throw ShapeError(this->name() + ": expected " + std::to_string(channels_) + " channels, got " +
                             shape_string(x.shape));
        const int n = x.dim(0);
        const std::size_t spatial = x.stride0() / channels_;
        training_ = training;
        Tensor<T> y(x.shape);
        xhat_ = Tensor<T>(x.shape);
        inv_std_.assign(channels_, T(0));
        const double m = static_cast<double>(n) * static_cast<double>(spatial);
        for (int c = 0; c < channels_; ++c) {
            double mean, var;
            if (training) {
                double sum = 0.0;
                for (int i = 0; i < n; ++i) {
                    const T* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * spatial;
                    for (std::size_t k = 0; k < spatial; ++k) sum += p[k];
                }
                mean = sum / m;
                double ss = 0.0;
                for (int i = 0; i < n; ++i) {
                    const T* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * spatial;
                    for (std::size_t k = 0; k < spatial; ++k) ss += (p[k] - mean) * (p[k] - mean);
                }
                var = ss / m;
                const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
                running_mean_.value[c] =
                    static_cast<T>((1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
                running_var_.value[c] =
                    static_cast<T>((1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
            } else {
                mean = running_mean_.value[c];
                var = running_var_.value[c];
            }
            const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
            const T mu = static_cast<T>(mean);
            inv_std_[c] = inv;
            const T g = gamma_.value[c], b = beta_.value[c];
            for (int i = 0; i < n; ++i) {
                const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * spatial;
                for (std::size_t k = 0; k < spatial; ++k) {
                    const T h = (x[off + k] - mu) * inv;
                    xhat_[off + k] = h;
                    y[off + k] = g * h + b;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) override {
        const int n = gy.dim(0);
        const std::size_t spatial = gy.stride0() / channels_;
        const double m = static_cast<double>(n) * static_cast<double>(spatial);
        Tensor<T> dx(gy.shape);
        for (int c = 0; c < channels_; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (int i = 0; i < n; ++i) {
                const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * spatial;
                for (std::size_t k = 0; k < spatial; ++k) {
                    sum_g += gy[off + k];
                    sum_gx += gy[off + k] * xhat_[off + k];
                }
            }
            gamma_.grad[c] += static_cast<T>(sum_gx);
            beta_.grad[c] += static_cast<T>(sum_g);
            const T scale = gamma_.value[c] * inv_std_[c];
            const T mean_g = static_cast<T>(sum_g / m), mean_gx = static_cast<T>(sum_gx / m);
            for (int i = 0; i < n; ++i) {
                const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * spatial;
                for (std::size_t k = 0; k < spatial; ++k)
                    dx[off + k] = training_ ? scale * (gy[off + k] - mean_g - xhat_[off + k] * mean_gx)
                                            : scale * gy[off + k];
            }
        }
        return dx;
    }

private:
    int channels_;
    bool training_ = false;
    Parameter<T> gamma_, beta_, running_mean_, running_var_;
    Tensor<T> xhat_;
    Buffer<T> inv_std_;
};

/// 2 x 2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
class MaxPool2d final : public Layer<T> {
public:
    using Layer<T>::Layer;
    std::string kind() const override { return "maxpool"; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        if (x.shape.size() != 4) throw ShapeError(this->name() + ": expected NCHW input");
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int ho = h / 2, wo = w / 2;
        if (ho < 1 || wo < 1) throw ShapeError(this->name() + ": input " + shape_string(x.shape) + " too small to pool");
        in_shape_ = x.shape;
        Tensor<T> y({n, c, ho, wo});
        argmax_.assign(y.size(), 0);
        std::size_t o = 0;
        for (int p = 0; p < n * c; ++p) {
            const std::size_t plane = static_cast<std::size_t>(p) * h * w;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++o) {
                    std::size_t best = plane + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = plane + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
                            if (x[idx] > x[best]) best = idx;
                        }
                    y[o] = x[best];
                    argmax_[o] = best;
                }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> dx(in_shape_);
        for (std::size_t o = 0; o < g.size(); ++o) dx[argmax_[o]] += g[o];
        return dx;
    }

private:
    std::vector<int> in_shape_;
    std::vector<std::size_t> argmax_;
};

/// conv -> ReLU -> batchnorm -> 2 x 2 max pool as one stage. Same arithmetic as the
/// four separate layers, but only the convolution output is kept for the whole batch;
/// activation, normalization and pooling are evaluated per sample while it is in cache.
template <typename T>
class ConvBlock final : public Layer<T> {
public:
    static constexpr double kEps = BatchNorm<T>::kEps;
    static constexpr double kMomentum = BatchNorm<T>::kMomentum;

    ConvBlock(std::string name, int in_channels, int out_channels, int kernel, int padding)
        : Layer<T>(name),
          in_(in_channels),
          out_(out_channels),
          k_(kernel),
          pad_(padding),
          weight_(name + ".conv.weight", {out_channels, in_channels, kernel, kernel}),
          bias_(name + ".conv.bias", {out_channels}),
          gamma_(name + ".bn.weight", {out_channels}, T(1)),
          beta_(name + ".bn.bias", {out_channels}, T(0)),
          running_mean_(name + ".bn.running_mean", {out_channels}, T(0)),
          running_var_(name + ".bn.running_var", {out_channels}, T(1)) {}

    std::string kind() const override { return "convblock"; }
    std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_, &gamma_, &beta_}; }
    std::vector<Parameter<T>*> buffers() override { return {&running_mean_, &running_var_}; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    Parameter<T>& gamma() { return gamma_; }
    Parameter<T>& beta() { return beta_; }
    Parameter<T>& running_mean() { return running_mean_; }
    Parameter<T>& running_var() { return running_var_; }
    void set_propagate_input_grad(bool on) { propagate_ = on; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        if (x.shape.size() != 4 || x.dim(1) != in_)
            throw ShapeError(this->name() + ": expected N x " + std::to_string(in_) + " x H x W input, got " +
                             shape_string(x.shape));
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        ho_ = h + 2 * pad_ - k_ + 1;
        wo_ = w + 2 * pad_ - k_ + 1;
        if (ho_ < 2 || wo_ < 2) throw ShapeError(this->name() + ": input " + shape_string(x.shape) + " too small");
        const int hp = ho_ / 2, wp = wo_ / 2, hw = ho_ * wo_, kk = in_ * k_ * k_;
        input_ = x;
        training_ = training;
        z_.resize(static_cast<std::size_t>(n) * out_ * hw);
        col_.resize(static_cast<std::size_t>(kk) * hw);
        Eigen::Map<const RowMatrix<T>> wmat(weight_.value.data(), out_, kk);
        Eigen::Map<const RowMatrix<T>> col(col_.data(), kk, hw);
        std::vector<double> sum(out_, 0.0), sumsq(out_, 0.0);
        for (int i = 0; i < n; ++i) {
            im2col(x.data() + static_cast<std::size_t>(i) * in_ * h * w, h, w);
            Eigen::Map<RowMatrix<T>> z(z_.data() + static_cast<std::size_t>(i) * out_ * hw, out_, hw);
            z.noalias() = wmat * col;
            for (int c = 0; c < out_; ++c) {
                z.row(c).array() += bias_.value[c];
                if (training) {
                    const auto r = z.row(c).array().max(T(0));
                    sum[c] += static_cast<double>(r.sum());
                    sumsq[c] += static_cast<double>(r.square().sum());
                }
            }
        }
        mu_.assign(out_, T(0));
        inv_.assign(out_, T(0));
        const double m = static_cast<double>(n) * hw;
        for (int c = 0; c < out_; ++c) {
            double mean, var;
            if (training) {
                mean = sum[c] / m;
                var = std::max(0.0, sumsq[c] / m - mean * mean);
                const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
                running_mean_.value[c] = static_cast<T>((1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
                running_var_.value[c] = static_cast<T>((1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
            } else {
                mean = running_mean_.value[c];
                var = running_var_.value[c];
            }
            mu_[c] = static_cast<T>(mean);
            inv_[c] = static_cast<T>(1.0 / std::sqrt(var + kEps));
        }

        Tensor<T> y({n, out_, hp, wp});
        argmax_.resize(y.size());
        xhat_.resize(y.size());
        ybuf_.resize(static_cast<std::size_t>(hw));
        const int wo = wo_;
        T* yo = y.data();
        T* xh = xhat_.data();
        int* am = argmax_.data();
        T* yp = ybuf_.data();
        for (int p = 0; p < n * out_; ++p) {
            const int c = p % out_;
            const T* zp = z_.data() + static_cast<std::size_t>(p) * hw;
            const T mu = mu_[c], inv = inv_[c], a = gamma_.value[c] * inv, b = beta_.value[c] - a * mu;
            ArrayMap(yp, hw) = ConstArrayMap(zp, hw).max(T(0)) * a + b;
            for (int oy = 0; oy < hp; ++oy, yo += wp, xh += wp, am += wp)
                pool_row(yp + 2 * oy * wo, zp + 2 * oy * wo, 2 * oy * wo, wo, wp, mu, inv, yo, xh, am);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
        const int hp = ho_ / 2, wp = wo_ / 2, hw = ho_ * wo_, pooled = hp * wp, kk = in_ * k_ * k_;
        const double m = static_cast<double>(n) * hw;
        Buffer<T> mean_g(out_, T(0)), mean_gx(out_, T(0)), scale(out_);
        for (int c = 0; c < out_; ++c) {
            double sg = 0.0, sgx = 0.0;
            for (int i = 0; i < n; ++i) {
                const std::size_t off = (static_cast<std::size_t>(i) * out_ + c) * pooled;
                for (int k = 0; k < pooled; ++k) {
                    sg += g[off + k];
                    sgx += g[off + k] * xhat_[off + k];
                }
            }
            gamma_.grad[c] += static_cast<T>(sgx);
            beta_.grad[c] += static_cast<T>(sg);
            if (training_) {
                mean_g[c] = static_cast<T>(sg / m);
                mean_gx[c] = static_cast<T>(sgx / m);
            }
            scale[c] = gamma_.value[c] * inv_[c];
        }

        Tensor<T> dx;
        if (propagate_) dx = Tensor<T>(input_.shape);
        col_.resize(static_cast<std::size_t>(kk) * hw);
        dcol_.resize(static_cast<std::size_t>(kk) * hw);
        gz_.resize(static_cast<std::size_t>(out_) * hw);
        Eigen::Map<const RowMatrix<T>> wmat(weight_.value.data(), out_, kk);
        Eigen::Map<RowMatrix<T>> dw(weight_.grad.data(), out_, kk);
        Eigen::Map<const RowMatrix<T>> col(col_.data(), kk, hw);
        Eigen::Map<RowMatrix<T>> dcol(dcol_.data(), kk, hw);
        Eigen::Map<RowMatrix<T>> gz(gz_.data(), out_, hw);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < out_; ++c) {
                const T* zp = z_.data() + (static_cast<std::size_t>(i) * out_ + c) * hw;
                T* gp = gz_.data() + static_cast<std::size_t>(c) * hw;
                const T mu = mu_[c], inv = inv_[c], mg = mean_g[c], mgx = mean_gx[c];
                const auto zc = ConstArrayMap(zp, hw);
                auto gc = ArrayMap(gp, hw);
                gc = -mg - (zc.max(T(0)) - mu) * (inv * mgx);
                const std::size_t off = (static_cast<std::size_t>(i) * out_ + c) * pooled;
                const int* am = argmax_.data() + off;
                const T* gs = g.data() + off;
                for (int k = 0; k < pooled; ++k) gp[am[k]] += gs[k];
                gc = (zc > T(0)).select(gc * scale[c], T(0));
            }
            im2col(input_.data() + static_cast<std::size_t>(i) * in_ * h * w, h, w);
            dw.noalias() += gz * col.transpose();
            for (int c = 0; c < out_; ++c) bias_.grad[c] += gz.row(c).sum();
            if (propagate_) {
                dcol.noalias() = wmat.transpose() * gz;
                col2im(dx.data() + static_cast<std::size_t>(i) * in_ * h * w, h, w);
            }
        }
        return dx;
    }

private:
    /// One row of 2 x 2 windows over normalized values `y` (pre-activation `z`).
    /// Select-only so it vectorizes; ties keep the earlier index in row-major order.
    static void pool_row(const T* __restrict y, const T* __restrict z, int base, int wo, int wp, T mu, T inv,
                         T* __restrict out, T* __restrict xhat, int* __restrict arg) {
        const T* y1 = y + wo;
        const T* z1 = z + wo;
        for (int ox = 0; ox < wp; ++ox) {
            const int j = 2 * ox;
            const T v0 = y[j], v1 = y[j + 1], v2 = y1[j], v3 = y1[j + 1];
            const bool up = v1 > v0, lo = v3 > v2;
            const T va = up ? v1 : v0, vb = lo ? v3 : v2;
            const T za = up ? z[j + 1] : z[j], zb = lo ? z1[j + 1] : z1[j];
            const int oa = up ? 1 : 0, ob = lo ? wo + 1 : wo;
            const bool second = vb > va;
            out[ox] = second ? vb : va;
            const T zbest = second ? zb : za;
            xhat[ox] = ((zbest > T(0) ? zbest : T(0)) - mu) * inv;
            arg[ox] = base + j + (second ? ob : oa);
        }
    }

    void im2col(const T* src, int h, int w) {
        T* dst = col_.data();
        for (int c = 0; c < in_; ++c)
            for (int ki = 0; ki < k_; ++ki)
                for (int kj = 0; kj < k_; ++kj) {
                    const int ox_lo = std::clamp(pad_ - kj, 0, wo_), ox_hi = std::clamp(w + pad_ - kj, 0, wo_);
                    for (int oy = 0; oy < ho_; ++oy, dst += wo_) {
                        const int iy = oy + ki - pad_;
                        if (iy < 0 || iy >= h) {
                            std::fill(dst, dst + wo_, T(0));
                            continue;
                        }
                        const T* row = src + (static_cast<std::size_t>(c) * h + iy) * w;
                        std::fill(dst, dst + ox_lo, T(0));
                        for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = row[ox + kj - pad_];
                        std::fill(dst + ox_hi, dst + wo_, T(0));
                    }
                }
    }

    void col2im(T* dst, int h, int w) const {
        const T* src = dcol_.data();
        for (int c = 0; c < in_; ++c)
            for (int ki = 0; ki < k_; ++ki)
                for (int kj = 0; kj < k_; ++kj) {
                    const int ox_lo = std::clamp(pad_ - kj, 0, wo_), ox_hi = std::clamp(w + pad_ - kj, 0, wo_);
                    for (int oy = 0; oy < ho_; ++oy, src += wo_) {
                        const int iy = oy + ki - pad_;
                        if (iy < 0 || iy >= h) continue;
                        T* row = dst + (static_cast<std::size_t>(c) * h + iy) * w;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) row[ox + kj - pad_] += src[ox];
                    }
                }
    }

    int in_, out_, k_, pad_;
    int ho_ = 0, wo_ = 0;
    bool propagate_ = true;
    bool training_ = false;
    Parameter<T> weight_, bias_, gamma_, beta_, running_mean_, running_var_;
    Tensor<T> input_;
    using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
    using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

    Buffer<T> z_, col_, dcol_, gz_, xhat_, mu_, inv_, ybuf_;
    std::vector<int> argmax_;
};

/// Fully connected layer on N x F input (any trailing shape is flattened).
template <typename T>
class Linear final : public Layer<T> {
public:
    Linear(std::string name, int in_features, int out_features)
        : Layer<T>(name),
          in_(in_features),
          out_(out_features),
          weight_(name + ".weight", {out_features, in_features}),
          bias_(name + ".bias", {out_features}) {}

    std::string kind() const override { return "linear"; }
    std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    int in_features() const { return in_; }
    int out_features() const { return out_; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        if (x.shape.empty() || x.stride0() != static_cast<std::size_t>(in_))
            throw ShapeError(this->name() + ": expected " + std::to_string(in_) + " features per sample, got " +
                             shape_string(x.shape));
        const int n = x.dim(0);
        input_ = x;
        Tensor<T> y({n, out_});
        Eigen::Map<const RowMatrix<T>> xm(x.data(), n, in_);
        Eigen::Map<const RowMatrix<T>> wm(weight_.value.data(), out_, in_);
        Eigen::Map<RowMatrix<T>> ym(y.data(), n, out_);
        ym.noalias() = xm * wm.transpose();
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < out_; ++o) ym(i, o) += bias_.value[o];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const int n = input_.dim(0);
        Eigen::Map<const RowMatrix<T>> xm(input_.data(), n, in_);
        Eigen::Map<const RowMatrix<T>> gm(g.data(), n, out_);
        Eigen::Map<const RowMatrix<T>> wm(weight_.value.data(), out_, in_);
        Eigen::Map<RowMatrix<T>> dw(weight_.grad.data(), out_, in_);
        dw.noalias() += gm.transpose() * xm;
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < out_; ++o) bias_.grad[o] += gm(i, o);
        Tensor<T> dx(input_.shape);
        Eigen::Map<RowMatrix<T>> dxm(dx.data(), n, in_);
        dxm.noalias() = gm * wm;
        return dx;
    }

private:
    int in_, out_;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

}  // namespace dragon::nn
