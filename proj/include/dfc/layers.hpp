#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dfc/ops.hpp"

namespace dfc {

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

/// Walks the named parameters and buffers of a component. Names are
/// dot-separated paths, stable across runs, and used as checkpoint keys.
template <class T>
struct Visitor {
    std::function<void(const std::string&, Var<T>&)> param = [](const std::string&, Var<T>&) {};
    std::function<void(const std::string&, Tensor<T>&)> buffer = [](const std::string&, Tensor<T>&) {};
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

namespace nn {

template <class T>
Tensor<T> normal_tensor(Shape shape, double mean, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

// Weights ~ N(0, 0.02) as in the pix2pix family; biases uniform in +-1/sqrt(fan_in).
template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng)
        : weight_(Var<T>::parameter(normal_tensor<T>({out, in, kernel, kernel}, 0.0, 0.02, rng))),
          bias_(Var<T>::parameter(uniform_tensor<T>({out}, 1.0 / std::sqrt(double(in * kernel * kernel)), rng))),
          stride_(stride), pad_(pad) {}

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight_, bias_, stride_, pad_); }

    int out_channels() const { return weight_.dim(0); }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        v.param(join_name(prefix, "weight"), weight_);
        v.param(join_name(prefix, "bias"), bias_);
    }

private:
    Var<T> weight_, bias_;
    int stride_ = 1, pad_ = 0;
};

template <class T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in, int out, int kernel, int stride, int pad, int output_pad, Rng& rng)
        : weight_(Var<T>::parameter(normal_tensor<T>({in, out, kernel, kernel}, 0.0, 0.02, rng))),
          bias_(Var<T>::parameter(uniform_tensor<T>({out}, 1.0 / std::sqrt(double(out * kernel * kernel)), rng))),
          stride_(stride), pad_(pad), output_pad_(output_pad) {}

    Var<T> operator()(const Var<T>& x) const {
        return conv_transpose2d(x, weight_, bias_, stride_, pad_, output_pad_);
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        v.param(join_name(prefix, "weight"), weight_);
        v.param(join_name(prefix, "bias"), bias_);
    }

private:
    Var<T> weight_, bias_;
    int stride_ = 1, pad_ = 0, output_pad_ = 0;
};

template <class T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(int channels, Rng& rng)
        : gamma_(Var<T>::parameter(normal_tensor<T>({channels}, 1.0, 0.02, rng))),
          beta_(Var<T>::parameter(Tensor<T>({channels}, T{0}))) {
        state_.running_mean = Tensor<T>({channels}, T{0});
        state_.running_var = Tensor<T>({channels}, T{1});
    }

    Var<T> operator()(const Var<T>& x, Mode mode) {
        return batch_norm2d(x, gamma_, beta_, state_, mode == Mode::Train);
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        v.param(join_name(prefix, "gamma"), gamma_);
        v.param(join_name(prefix, "beta"), beta_);
        v.buffer(join_name(prefix, "running_mean"), state_.running_mean);
        v.buffer(join_name(prefix, "running_var"), state_.running_var);
    }

private:
    Var<T> gamma_, beta_;
    BatchNormState<T> state_;
};

enum class Activation { None, ReLU, LeakyReLU, Tanh };

template <class T>
Var<T> activate(const Var<T>& x, Activation act) {
    switch (act) {
        case Activation::ReLU: return relu(x);
        case Activation::LeakyReLU: return leaky_relu(x, T(0.2));
        case Activation::Tanh: return tanh(x);
        case Activation::None: break;
    }
    return x;
}

/// [reflection pad] -> conv -> [batch norm] -> activation.
struct ConvBlockOptions {
    int kernel = 3;
    int stride = 1;
    int zero_pad = 0;
    int reflect_pad = 0;
    bool batch_norm = true;
    Activation act = Activation::ReLU;
};

template <class T>
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(int in, int out, ConvBlockOptions opt, Rng& rng)
        : conv_(in, out, opt.kernel, opt.stride, opt.zero_pad, rng), opt_(opt) {
        if (opt.batch_norm) norm_.emplace(out, rng);
    }

    Var<T> operator()(const Var<T>& x, Mode mode) {
        Var<T> y = opt_.reflect_pad > 0 ? reflection_pad2d(x, opt_.reflect_pad) : x;
        y = conv_(y);
        if (norm_) y = (*norm_)(y, mode);
        return activate(y, opt_.act);
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        conv_.visit(v, join_name(prefix, "conv"));
        if (norm_) norm_->visit(v, join_name(prefix, "norm"));
    }

private:
    Conv2d<T> conv_;
    std::optional<BatchNorm2d<T>> norm_;
    ConvBlockOptions opt_;
};

/// Two reflection-padded 3x3 conv + batch-norm sub-blocks with a ReLU after
/// the first, plus an identity shortcut. When the channel count changes the
/// shortcut is a learned 1x1 projection.
template <class T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(int in, int out, Rng& rng)
        : first_(in, out, {.kernel = 3, .reflect_pad = 1, .batch_norm = true, .act = Activation::ReLU}, rng),
          second_(out, out, {.kernel = 3, .reflect_pad = 1, .batch_norm = true, .act = Activation::None}, rng) {
        if (in != out) shortcut_.emplace(in, out, 1, 1, 0, rng);
    }

    Var<T> operator()(const Var<T>& x, Mode mode) {
        Var<T> body = second_(first_(x, mode), mode);
        return add(shortcut_ ? (*shortcut_)(x) : x, body);
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        first_.visit(v, join_name(prefix, "block1"));
        second_.visit(v, join_name(prefix, "block2"));
        if (shortcut_) shortcut_->visit(v, join_name(prefix, "shortcut"));
    }

private:
    ConvBlock<T> first_, second_;
    std::optional<Conv2d<T>> shortcut_;
};

}  // namespace nn

/// Collects the parameters of a component, in visit order.
template <class T, class Component>
std::vector<std::pair<std::string, Var<T>>> named_parameters(Component& c, const std::string& prefix = "") {
    std::vector<std::pair<std::string, Var<T>>> out;
    Visitor<T> v;
    v.param = [&](const std::string& name, Var<T>& p) { out.emplace_back(name, p); };
    c.visit(v, prefix);
    return out;
}

}  // namespace dfc
