#pragma once

#include <array>
#include <string>
#include <vector>

#include "dfc/layers.hpp"
#include "dfc/types.hpp"

namespace dfc {

/// S(x): 7x7 stem (b channels), three stride-2 3x3 blocks (b -> 8b) and five
/// residual blocks.
template <class T>
class StaticEncoder {
public:
    StaticEncoder() = default;
    StaticEncoder(int base, Rng& rng) : stem_(3, base, {.kernel = 7, .reflect_pad = 3}, rng) {
        int ch = base;
        for (auto& blk : down_) {
            blk = nn::ConvBlock<T>(ch, ch * 2, {.kernel = 3, .stride = 2, .zero_pad = 1}, rng);
            ch *= 2;
        }
        for (auto& r : res_) r = nn::ResidualBlock<T>(ch, ch, rng);
    }

    Var<T> operator()(const Var<T>& images, Mode mode) {
        if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) % kDownsample != 0 ||
            images.dim(3) % kDownsample != 0)
            throw ShapeError("encode_static: expected [N,3,H,W] with H, W divisible by 8, got " +
                             shape_str(images.shape()));
        Var<T> x = stem_(images, mode);
        for (auto& blk : down_) x = blk(x, mode);
        for (auto& r : res_) x = r(x, mode);
        return x;
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        stem_.visit(v, join_name(prefix, "stem"));
        for (std::size_t i = 0; i < down_.size(); ++i) down_[i].visit(v, join_name(prefix, "down" + std::to_string(i)));
        for (std::size_t i = 0; i < res_.size(); ++i) res_[i].visit(v, join_name(prefix, "res" + std::to_string(i)));
    }

private:
    nn::ConvBlock<T> stem_;
    std::array<nn::ConvBlock<T>, 3> down_;
    std::array<nn::ResidualBlock<T>, 5> res_;
};

/// G(m, s): concatenated features (16b channels) through four residual
/// blocks, the first projecting to 8b; three stride-2 transposed 3x3 blocks
/// (8b -> b); then two reflection-padded 7x7 convolutions and tanh.
template <class T>
class Generator {
public:
    Generator() = default;
    Generator(int base, Rng& rng) {
        const int feat = base * 8;
        res_[0] = nn::ResidualBlock<T>(2 * feat, feat, rng);
        for (std::size_t i = 1; i < res_.size(); ++i) res_[i] = nn::ResidualBlock<T>(feat, feat, rng);
        int ch = feat;
        for (std::size_t i = 0; i < up_.size(); ++i) {
            up_[i] = nn::ConvTranspose2d<T>(ch, ch / 2, 3, 2, 1, 1, rng);
            up_norm_[i] = nn::BatchNorm2d<T>(ch / 2, rng);
            ch /= 2;
        }
        head_[0] = nn::ConvBlock<T>(ch, ch, {.kernel = 7, .reflect_pad = 3, .batch_norm = false, .act = nn::Activation::None}, rng);
        head_[1] = nn::ConvBlock<T>(ch, 3, {.kernel = 7, .reflect_pad = 3, .batch_norm = false, .act = nn::Activation::Tanh}, rng);
    }

    Var<T> operator()(const Var<T>& pose, const Var<T>& stat, Mode mode) {
        if (pose.value().rank() != 4 || pose.shape() != stat.shape())
            throw ShapeError("generate: pose feature " + shape_str(pose.shape()) + " and static feature " +
                             shape_str(stat.shape()) + " differ");
        Var<T> x = concat_channels<T>({pose, stat});
        for (auto& r : res_) x = r(x, mode);
        for (std::size_t i = 0; i < up_.size(); ++i) x = relu(up_norm_[i](up_[i](x), mode));
        for (auto& h : head_) x = h(x, mode);
        return x;
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        for (std::size_t i = 0; i < res_.size(); ++i) res_[i].visit(v, join_name(prefix, "res" + std::to_string(i)));
        for (std::size_t i = 0; i < up_.size(); ++i) {
            up_[i].visit(v, join_name(prefix, "up" + std::to_string(i) + ".conv"));
            up_norm_[i].visit(v, join_name(prefix, "up" + std::to_string(i) + ".norm"));
        }
        for (std::size_t i = 0; i < head_.size(); ++i) head_[i].visit(v, join_name(prefix, "head" + std::to_string(i)));
    }

private:
    std::array<nn::ResidualBlock<T>, 4> res_;
    std::array<nn::ConvTranspose2d<T>, 3> up_;
    std::array<nn::BatchNorm2d<T>, 3> up_norm_;
    std::array<nn::ConvBlock<T>, 2> head_;
};

inline constexpr int kConditionChannels = 32;

/// Brings a pose feature to image resolution for the discriminator: 1x1
/// conv to 32 channels, then x8 nearest upsampling.
template <class T>
class ConditioningProjection {
public:
    ConditioningProjection() = default;
    ConditioningProjection(int base, Rng& rng) : conv_(base * 8, kConditionChannels, 1, 1, 0, rng) {}

    Var<T> operator()(const Var<T>& pose) const { return upsample_nearest(conv_(pose), kDownsample); }

    void visit(const Visitor<T>& v, const std::string& prefix) { conv_.visit(v, join_name(prefix, "conv")); }

private:
    nn::Conv2d<T> conv_;
};

/// One PatchGAN-style scale: five 4x4 blocks, strides (2,2,2,1,1), padding 1.
template <class T>
class PatchDiscriminator {
public:
    PatchDiscriminator() = default;
    PatchDiscriminator(int in, int base, Rng& rng) {
        const std::array<int, 5> out = {base, base * 2, base * 4, base * 8, 1};
        const std::array<int, 5> stride = {2, 2, 2, 1, 1};
        int ch = in;
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            nn::ConvBlockOptions opt{.kernel = 4, .stride = stride[i], .zero_pad = 1};
            opt.batch_norm = i >= 1 && i <= 3;
            opt.act = i < 4 ? nn::Activation::LeakyReLU : nn::Activation::None;
            blocks_[i] = nn::ConvBlock<T>(ch, out[i], opt, rng);
            ch = out[i];
        }
    }

    /// The outputs of all five blocks; the last is the raw patch logit map.
    std::vector<Var<T>> operator()(const Var<T>& x, Mode mode) {
        std::vector<Var<T>> feats;
        Var<T> y = x;
        for (auto& b : blocks_) {
            y = b(y, mode);
            feats.push_back(y);
        }
        return feats;
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(v, join_name(prefix, "block" + std::to_string(i)));
    }

private:
    std::array<nn::ConvBlock<T>, 5> blocks_;
};

template <class T>
struct DiscriminatorOutput {
    std::array<Var<T>, 2> scores;                 // sigmoid patch maps, full and half scale
    std::array<std::vector<Var<T>>, 2> features;  // five block outputs per scale
};

/// D = (D1, D2) over the image stacked with the projected pose condition;
/// D2 sees the stack average-pooled by 2. The two scales do not share weights.
template <class T>
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(int base, Rng& rng)
        : full_(3 + kConditionChannels, base, rng), half_(3 + kConditionChannels, base, rng) {}

    DiscriminatorOutput<T> operator()(const Var<T>& stack, Mode mode) {
        DiscriminatorOutput<T> out;
        out.features[0] = full_(stack, mode);
        out.features[1] = half_(avg_pool2d(stack, 2), mode);
        for (int s = 0; s < 2; ++s) out.scores[s] = sigmoid(out.features[s].back());
        return out;
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        full_.visit(v, join_name(prefix, "d1"));
        half_.visit(v, join_name(prefix, "d2"));
    }

private:
    PatchDiscriminator<T> full_, half_;
};

/// D(x, M(x_s)): projects the pose feature, stacks it with the image and runs
/// both scales.
template <class T>
DiscriminatorOutput<T> discriminate(const Var<T>& images, const Var<T>& pose, Discriminator<T>& disc,
                                    ConditioningProjection<T>& proj, Mode mode) {
    if (images.value().rank() != 4 || pose.value().rank() != 4 || images.dim(0) != pose.dim(0) ||
        images.dim(2) != pose.dim(2) * kDownsample || images.dim(3) != pose.dim(3) * kDownsample)
        throw ShapeError("discriminate: image " + shape_str(images.shape()) + " and pose feature " +
                         shape_str(pose.shape()) + " do not share a geometry");
    if (images.dim(2) < 48 || images.dim(3) < 48)
        throw ShapeError("discriminate: images must be at least 48x48, got " + shape_str(images.shape()));
    return disc(concat_channels<T>({images, proj(pose)}), mode);
}

}  // namespace dfc
