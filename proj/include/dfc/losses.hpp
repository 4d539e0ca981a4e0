#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dfc/archive.hpp"
#include "dfc/layers.hpp"
#include "dfc/networks.hpp"
#include "dfc/types.hpp"

namespace dfc {

inline constexpr double kLogEps = 1e-12;

// ---------------------------------------------------------------------------
// Perceptual feature extractors

/// A frozen map from images [N,3,H,W] in [-1,1] to at least three feature
/// maps at decreasing resolution.
template <class T>
class PerceptualExtractor {
public:
    virtual ~PerceptualExtractor() = default;
    virtual std::vector<Var<T>> features(const Var<T>& images) const = 0;
    virtual std::vector<const Tensor<T>*> frozen_weights() const = 0;
};

/// Seeded random 3-stage conv net: 3->16 (stride 1), 16->32 and 32->64
/// (stride 2), 3x3 kernels, ReLU after each stage.
template <class T>
class RandomFeatureExtractor final : public PerceptualExtractor<T> {
public:
    explicit RandomFeatureExtractor(std::uint64_t seed) {
        Rng rng(seed);
        const std::array<int, 4> widths = {3, 16, 32, 64};
        for (int i = 0; i < 3; ++i) {
            const int fan_in = widths[i] * 9;
            weights_[i] = Var<T>::constant(nn::normal_tensor<T>({widths[i + 1], widths[i], 3, 3}, 0.0, std::sqrt(2.0 / fan_in), rng));
            biases_[i] = Var<T>::constant(nn::uniform_tensor<T>({widths[i + 1]}, 0.05, rng));
        }
    }

    std::vector<Var<T>> features(const Var<T>& images) const override {
        std::vector<Var<T>> out;
        Var<T> x = images;
        for (int i = 0; i < 3; ++i) {
            x = relu(conv2d(x, weights_[i], biases_[i], i == 0 ? 1 : 2, 1));
            out.push_back(x);
        }
        return out;
    }

    std::vector<const Tensor<T>*> frozen_weights() const override {
        std::vector<const Tensor<T>*> out;
        for (int i = 0; i < 3; ++i) {
            out.push_back(&weights_[i].value());
            out.push_back(&biases_[i].value());
        }
        return out;
    }

private:
    std::array<Var<T>, 3> weights_, biases_;
};

/// VGG-19 convolutional trunk up to relu5_1, tapping relu1_1, relu2_1,
/// relu3_1, relu4_1 and relu5_1. Weights come from a tensor file using the
/// torchvision layer indices (`features.0.weight`, `features.0.bias`, ...).
/// Inputs are mapped from [-1,1] to ImageNet-normalized RGB first.
template <class T>
class Vgg19Extractor final : public PerceptualExtractor<T> {
public:
    explicit Vgg19Extractor(const std::filesystem::path& weights_file) {
        auto tensors = load_tensor_file<T>(weights_file);
        int in = 3;
        for (const auto& [index, out] : layout()) {
            if (index < 0) continue;
            const std::string base = "features." + std::to_string(index);
            auto w = tensors.find(base + ".weight");
            auto b = tensors.find(base + ".bias");
            if (w == tensors.end() || b == tensors.end())
                throw IoError(weights_file.string() + ": missing " + base + " weights");
            expect_shape(w->second, {out, in, 3, 3}, base + ".weight");
            expect_shape(b->second, {out}, base + ".bias");
            weights_.push_back(Var<T>::constant(w->second));
            biases_.push_back(Var<T>::constant(b->second));
            in = out;
        }
        // (v + 1) / 2 then (v - mean) / std, as a diagonal 1x1 convolution.
        const double mean[3] = {0.485, 0.456, 0.406}, stdev[3] = {0.229, 0.224, 0.225};
        Tensor<T> nw({3, 3, 1, 1}), nb({3});
        for (int c = 0; c < 3; ++c) {
            nw[c * 3 + c] = static_cast<T>(0.5 / stdev[c]);
            nb[c] = static_cast<T>((0.5 - mean[c]) / stdev[c]);
        }
        norm_weight_ = Var<T>::constant(std::move(nw));
        norm_bias_ = Var<T>::constant(std::move(nb));
    }

    std::vector<Var<T>> features(const Var<T>& images) const override {
        std::vector<Var<T>> out;
        Var<T> x = conv2d(images, norm_weight_, norm_bias_, 1, 0);
        std::size_t conv = 0;
        bool tap_next = true;  // the first conv after each pooling is a tap
        for (const auto& [index, ch] : layout()) {
            if (index < 0) {
                x = max_pool2d(x, 2);
                tap_next = true;
                continue;
            }
            x = relu(conv2d(x, weights_[conv], biases_[conv], 1, 1));
            ++conv;
            if (tap_next) out.push_back(x);
            tap_next = false;
        }
        return out;
    }

    std::vector<const Tensor<T>*> frozen_weights() const override {
        std::vector<const Tensor<T>*> out;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            out.push_back(&weights_[i].value());
            out.push_back(&biases_[i].value());
        }
        return out;
    }

    /// (torchvision index, output channels); index -1 marks a 2x2 max pool.
    static const std::vector<std::pair<int, int>>& layout() {
        static const std::vector<std::pair<int, int>> l = {
            {0, 64},   {2, 64},   {-1, 0},  {5, 128},  {7, 128},  {-1, 0},  {10, 256}, {12, 256},
            {14, 256}, {16, 256}, {-1, 0},  {19, 512}, {21, 512}, {23, 512}, {25, 512}, {-1, 0},
            {28, 512},
        };
        return l;
    }

private:
    std::vector<Var<T>> weights_, biases_;
    Var<T> norm_weight_, norm_bias_;
};

template <class T>
std::shared_ptr<const PerceptualExtractor<T>> make_feature_extractor(const ModelConfig& cfg) {
    if (cfg.extractor_kind == "random") return std::make_shared<RandomFeatureExtractor<T>>(cfg.extractor_seed);
    if (cfg.extractor_kind == "vgg19") return std::make_shared<Vgg19Extractor<T>>(cfg.extractor_weights);
    throw ConfigError("unknown extractor kind '" + cfg.extractor_kind + "'");
}

// ---------------------------------------------------------------------------
// Objective terms

/// Mean of log D over all patches of both scales.
template <class T>
Var<T> adv_pos(const std::array<Var<T>, 2>& real_scores) {
    return weighted_sum<T>({{T(0.5), mean(log_clamped(real_scores[0], T(kLogEps)))},
                            {T(0.5), mean(log_clamped(real_scores[1], T(kLogEps)))}});
}

/// Mean of log(1 - D) over all patches of both scales.
template <class T>
Var<T> adv_neg(const std::array<Var<T>, 2>& fake_scores) {
    auto one_minus = [](const Var<T>& s) { return affine(s, T{-1}, T{1}); };
    return weighted_sum<T>({{T(0.5), mean(log_clamped(one_minus(fake_scores[0]), T(kLogEps)))},
                            {T(0.5), mean(log_clamped(one_minus(fake_scores[1]), T(kLogEps)))}});
}

inline double adv_total(double pos, double neg) { return -(pos + neg); }

template <class T>
Var<T> adv_total(const Var<T>& pos, const Var<T>& neg) {
    return weighted_sum<T>({{T{-1}, pos}, {T{-1}, neg}});
}

/// Non-saturating generator surrogate: -mean log D(fake), averaged over scales.
template <class T>
Var<T> adv_generator(const std::array<Var<T>, 2>& fake_scores) {
    return scale(adv_pos(fake_scores), T{-1});
}

/// Per scale, (1/5) times the sum of mean absolute differences over the five
/// block outputs; averaged over the two scales.
template <class T>
Var<T> feature_matching(const std::array<std::vector<Var<T>>, 2>& real,
                        const std::array<std::vector<Var<T>>, 2>& fake) {
    std::vector<std::pair<T, Var<T>>> terms;
    for (int s = 0; s < 2; ++s) {
        if (real[s].size() != fake[s].size() || real[s].empty())
            throw ShapeError("feature_matching: feature lists differ in length");
        const T w = T{1} / (T{2} * static_cast<T>(real[s].size()));
        for (std::size_t i = 0; i < real[s].size(); ++i) terms.emplace_back(w, mean_abs_diff(real[s][i], fake[s][i]));
    }
    return weighted_sum(terms);
}

/// Sum over extractor layers of the mean absolute feature difference.
template <class T>
Var<T> perceptual(const Var<T>& x_syn, const Var<T>& x_s, const PerceptualExtractor<T>& extractor) {
    if (x_syn.shape() != x_s.shape())
        throw ShapeError("perceptual: " + shape_str(x_syn.shape()) + " vs " + shape_str(x_s.shape()));
    auto fa = extractor.features(x_syn);
    auto fb = extractor.features(x_s);
    std::vector<std::pair<T, Var<T>>> terms;
    for (std::size_t i = 0; i < fa.size(); ++i) terms.emplace_back(T{1}, mean_abs_diff(fa[i], fb[i]));
    return weighted_sum(terms);
}

/// Mean absolute difference between the pose features of the synthesized and source images.
template <class T>
Var<T> pose_consistency(const Var<T>& m_syn, const Var<T>& m_s) {
    return mean_abs_diff(m_syn, m_s);
}

/// Mean absolute difference between the static features of the synthesized and target images.
template <class T>
Var<T> static_consistency(const Var<T>& s_syn, const Var<T>& s_t) {
    return mean_abs_diff(s_syn, s_t);
}

inline double support_loss(double adv_neg_val, double mc_val, double sc_val, const LossWeights& w) {
    return w.adv * adv_neg_val + w.mc * mc_val + w.sc * sc_val;
}

template <class T>
Var<T> support_loss(const Var<T>& adv_neg_val, const Var<T>& mc_val, const Var<T>& sc_val, const LossWeights& w) {
    return weighted_sum<T>({{T(w.adv), adv_neg_val}, {T(w.mc), mc_val}, {T(w.sc), sc_val}});
}

/// Fills `full` from the recorded terms: the adversarial term is
/// -(adv+ + adv-); disabled consistency or support terms contribute nothing.
inline LossReport full_objective(LossReport terms, const LossWeights& w, const AblationFlags& flags) {
    terms.full = w.adv * adv_total(terms.adv_pos, terms.adv_neg) + w.fm * terms.fm + w.per * terms.per +
                 (flags.use_mc ? w.mc * terms.mc : 0.0) + (flags.use_sc ? w.sc * terms.sc : 0.0) +
                 (flags.use_support ? terms.sup : 0.0);
    return terms;
}

/// Differentiable form of the same weighted sum. Undefined terms count as zero.
template <class T>
struct ObjectiveTerms {
    Var<T> adv_pos, adv_neg, fm, per, mc, sc, sup;
};

template <class T>
Var<T> full_objective(const ObjectiveTerms<T>& t, const LossWeights& w, const AblationFlags& flags) {
    std::vector<std::pair<T, Var<T>>> terms;
    auto add = [&](double weight, const Var<T>& v) {
        if (v.defined()) terms.emplace_back(static_cast<T>(weight), v);
    };
    add(-w.adv, t.adv_pos);
    add(-w.adv, t.adv_neg);
    add(w.fm, t.fm);
    add(w.per, t.per);
    if (flags.use_mc) add(w.mc, t.mc);
    if (flags.use_sc) add(w.sc, t.sc);
    if (flags.use_support) add(1.0, t.sup);
    if (terms.empty()) return Var<T>::constant(Tensor<T>::scalar(T{0}));
    return weighted_sum(terms);
}

}  // namespace dfc
