#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dfc/autograd.hpp"
#include "dfc/error.hpp"
#include "dfc/tensor.hpp"

namespace dfc {

inline constexpr int kHeatmapChannels = 18;
inline constexpr int kPafChannels = 38;
inline constexpr int kPoseChannels = kHeatmapChannels + kPafChannels;
inline constexpr int kDownsample = 8;

/// A normalized RGB image: [3, H, W] with values in [-1, 1] and H, W
/// divisible by 8. Only constructible through validation.
template <class T>
class BasicImage {
public:
    BasicImage() = default;

    int height() const { return data_.dim(1); }
    int width() const { return data_.dim(2); }
    const Tensor<T>& tensor() const noexcept { return data_; }

    /// [1, 3, H, W] constant for feeding networks.
    Var<T> as_batch() const { return Var<T>::constant(data_.reshaped({1, 3, height(), width()})); }

    template <class U>
    BasicImage<U> cast() const {
        BasicImage<U> out;
        out.data_ = data_.template cast<U>();
        return out;
    }

    friend bool operator==(const BasicImage& a, const BasicImage& b) { return a.data_ == b.data_; }

private:
    template <class U>
    friend BasicImage<U> validate_image(Tensor<U> raw);
    template <class U>
    friend class BasicImage;

    Tensor<T> data_;
};

using Image = BasicImage<float>;

/// Checks shape, finiteness and range. Values may exceed [-1, 1] by at
/// most 1e-6; nothing is clamped.
template <class T>
BasicImage<T> validate_image(Tensor<T> raw) {
    if (raw.rank() == 4 && raw.dim(0) == 1) raw = raw.reshaped({raw.dim(1), raw.dim(2), raw.dim(3)});
    if (raw.rank() != 3 || raw.dim(0) != 3)
        throw ShapeError("image must be [3,H,W], got " + shape_str(raw.shape()));
    if (raw.dim(1) <= 0 || raw.dim(2) <= 0 || raw.dim(1) % kDownsample != 0 || raw.dim(2) % kDownsample != 0)
        throw ShapeError("image height and width must be positive multiples of 8, got " + shape_str(raw.shape()));
    for (T v : raw.values()) {
        if (!std::isfinite(v)) throw NonFiniteError("image contains a non-finite value");
        if (std::abs(v) > T{1} + T(1e-6))
            throw RangeError("image value " + std::to_string(v) + " outside [-1, 1]");
    }
    BasicImage<T> img;
    img.data_ = std::move(raw);
    return img;
}

/// v -> (v + 1) * 127.5
template <class T>
Tensor<T> to_pixel_space(const BasicImage<T>& img) {
    Tensor<T> out = img.tensor();
    for (auto& v : out.values()) v = (v + T{1}) * T(127.5);
    return out;
}

template <class T>
BasicImage<T> from_pixel_space(Tensor<T> pixels) {
    for (auto& v : pixels.values()) v = v / T(127.5) - T{1};
    return validate_image(std::move(pixels));
}

template <class T>
Tensor<T> stack_images(const std::vector<BasicImage<T>>& images) {
    if (images.empty()) throw ShapeError("stack_images: empty batch");
    const int h = images[0].height(), w = images[0].width();
    const std::size_t plane = 3ull * h * w;
    Tensor<T> out({static_cast<int>(images.size()), 3, h, w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].height() != h || images[i].width() != w)
            throw ShapeError("stack_images: images differ in size");
        std::copy_n(images[i].tensor().data(), plane, out.data() + i * plane);
    }
    return out;
}

/// Splits [N,3,H,W] into validated images.
template <class T>
std::vector<BasicImage<T>> unstack_images(const Tensor<T>& batch) {
    if (batch.rank() != 4 || batch.dim(1) != 3) throw ShapeError("unstack_images: expected [N,3,H,W]");
    const std::size_t plane = 3ull * batch.dim(2) * batch.dim(3);
    std::vector<BasicImage<T>> out;
    for (int i = 0; i < batch.dim(0); ++i) {
        std::vector<T> data(batch.data() + i * plane, batch.data() + (i + 1) * plane);
        out.push_back(validate_image(Tensor<T>({3, batch.dim(2), batch.dim(3)}, std::move(data))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss configuration and reporting

struct LossWeights {
    double adv = 1.0;
    double fm = 10.0;
    double per = 10.0;
    double mc = 0.1;
    double sc = 0.01;

    void validate() const {
        for (double w : {adv, fm, per, mc, sc})
            if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
    }
};

/// Switches for the ablation rows: keypoint amplifier, the two consistency
/// losses and the support-set objective.
struct AblationFlags {
    bool use_amplifier = true;
    bool use_mc = true;
    bool use_sc = true;
    bool use_support = true;

    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// The seven ablation rows, numbered 1..7:
/// 1 none, 2 KA, 3 KA+sc, 4 KA+mc, 5 KA+sc+mc, 6 sc+mc+sup, 7 all.
inline AblationFlags ablation_row(int row) {
    switch (row) {
        case 1: return {false, false, false, false};
        case 2: return {true, false, false, false};
        case 3: return {true, false, true, false};
        case 4: return {true, true, false, false};
        case 5: return {true, true, true, false};
        case 6: return {false, true, true, true};
        case 7: return {true, true, true, true};
        default: throw ConfigError("ablation row must be in 1..7, got " + std::to_string(row));
    }
}

/// Per-term values of one training step. Terms that a step does not
/// compute stay at zero.
struct LossReport {
    double adv_pos = 0.0;
    double adv_neg = 0.0;
    double fm = 0.0;
    double per = 0.0;
    double mc = 0.0;
    double sc = 0.0;
    double sup = 0.0;
    double full = 0.0;

    std::array<double, 8> values() const { return {adv_pos, adv_neg, fm, per, mc, sc, sup, full}; }

    bool finite() const {
        for (double v : values())
            if (!std::isfinite(v)) return false;
        return true;
    }
};

enum class GanLoss { NonSaturating, Saturating };

struct ModelConfig {
    int image_size = 256;
    double temperature = 0.01;
    LossWeights loss_weights;
    AblationFlags flags;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 1;
    long total_iterations = 10000;
    std::uint64_t rng_seed = 0;
    /// Width of the first stage; the feature maps carry 8x this many channels.
    int base_channels = 64;
    long checkpoint_every = 1000;
    GanLoss gan_loss = GanLoss::NonSaturating;
    std::string estimator_kind = "synthetic";
    std::string estimator_weights;
    std::uint64_t estimator_seed = 7;
    std::string extractor_kind = "random";
    std::string extractor_weights;
    std::uint64_t extractor_seed = 11;

    int feature_channels() const { return base_channels * 8; }

    void validate() const {
        if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
        loss_weights.validate();
        if (image_size < 48 || image_size % kDownsample != 0)
            throw ConfigError("image_size must be a multiple of 8 and at least 48, got " + std::to_string(image_size));
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("moment coefficients must lie in [0, 1)");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (total_iterations < 0) throw ConfigError("total_iterations must be >= 0");
        if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
        if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
        if (estimator_kind != "synthetic" && estimator_kind != "conv")
            throw ConfigError("estimator.kind must be synthetic or conv");
        if (extractor_kind != "random" && extractor_kind != "vgg19")
            throw ConfigError("extractor.kind must be random or vgg19");
        if (extractor_kind == "vgg19" && extractor_weights.empty())
            throw ConfigError("extractor.kind = vgg19 needs extractor.weights");
    }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <class N>
N parse_number(const std::string& key, const std::string& value) {
    N out{};
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || p != value.data() + value.size())
        throw ConfigError("invalid value for " + key + ": '" + value + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys are errors.
inline void apply_config_value(ModelConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_number;
    if (key == "image_size") cfg.image_size = parse_number<int>(key, value);
    else if (key == "temperature") cfg.temperature = parse_number<double>(key, value);
    else if (key == "lambda_adv") cfg.loss_weights.adv = parse_number<double>(key, value);
    else if (key == "lambda_fm") cfg.loss_weights.fm = parse_number<double>(key, value);
    else if (key == "lambda_per") cfg.loss_weights.per = parse_number<double>(key, value);
    else if (key == "lambda_mc") cfg.loss_weights.mc = parse_number<double>(key, value);
    else if (key == "lambda_sc") cfg.loss_weights.sc = parse_number<double>(key, value);
    else if (key == "use_amplifier") cfg.flags.use_amplifier = parse_bool(key, value);
    else if (key == "use_mc") cfg.flags.use_mc = parse_bool(key, value);
    else if (key == "use_sc") cfg.flags.use_sc = parse_bool(key, value);
    else if (key == "use_support") cfg.flags.use_support = parse_bool(key, value);
    else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(key, value);
    else if (key == "beta1") cfg.beta1 = parse_number<double>(key, value);
    else if (key == "beta2") cfg.beta2 = parse_number<double>(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_number<int>(key, value);
    else if (key == "total_iterations") cfg.total_iterations = parse_number<long>(key, value);
    else if (key == "rng_seed") cfg.rng_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "base_channels") cfg.base_channels = parse_number<int>(key, value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_number<long>(key, value);
    else if (key == "gan_loss") {
        if (value == "non_saturating") cfg.gan_loss = GanLoss::NonSaturating;
        else if (value == "saturating") cfg.gan_loss = GanLoss::Saturating;
        else throw ConfigError("gan_loss must be non_saturating or saturating");
    }
    else if (key == "estimator.kind") cfg.estimator_kind = value;
    else if (key == "estimator.weights") cfg.estimator_weights = value;
    else if (key == "estimator.seed") cfg.estimator_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "extractor.kind") cfg.extractor_kind = value;
    else if (key == "extractor.weights") cfg.extractor_weights = value;
    else if (key == "extractor.seed") cfg.extractor_seed = parse_number<std::uint64_t>(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

/// Parses flat `key = value` text; '#' starts a comment. Missing keys keep
/// their defaults. The result is validated.
inline ModelConfig parse_config(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        apply_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

inline ModelConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

/// Canonical text form; parse_config(serialize_config(c)) reproduces c.
inline std::string serialize_config(const ModelConfig& c) {
    using detail::format_double;
    std::ostringstream os;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "image_size = " << c.image_size << '\n'
       << "temperature = " << format_double(c.temperature) << '\n'
       << "lambda_adv = " << format_double(c.loss_weights.adv) << '\n'
       << "lambda_fm = " << format_double(c.loss_weights.fm) << '\n'
       << "lambda_per = " << format_double(c.loss_weights.per) << '\n'
       << "lambda_mc = " << format_double(c.loss_weights.mc) << '\n'
       << "lambda_sc = " << format_double(c.loss_weights.sc) << '\n'
       << "use_amplifier = " << b(c.flags.use_amplifier) << '\n'
       << "use_mc = " << b(c.flags.use_mc) << '\n'
       << "use_sc = " << b(c.flags.use_sc) << '\n'
       << "use_support = " << b(c.flags.use_support) << '\n'
       << "learning_rate = " << format_double(c.learning_rate) << '\n'
       << "beta1 = " << format_double(c.beta1) << '\n'
       << "beta2 = " << format_double(c.beta2) << '\n'
       << "batch_size = " << c.batch_size << '\n'
       << "total_iterations = " << c.total_iterations << '\n'
       << "rng_seed = " << c.rng_seed << '\n'
       << "base_channels = " << c.base_channels << '\n'
       << "checkpoint_every = " << c.checkpoint_every << '\n'
       << "gan_loss = " << (c.gan_loss == GanLoss::NonSaturating ? "non_saturating" : "saturating") << '\n'
       << "estimator.kind = " << c.estimator_kind << '\n'
       << "estimator.weights = " << c.estimator_weights << '\n'
       << "estimator.seed = " << c.estimator_seed << '\n'
       << "extractor.kind = " << c.extractor_kind << '\n'
       << "extractor.weights = " << c.extractor_weights << '\n'
       << "extractor.seed = " << c.extractor_seed << '\n';
    return os.str();
}

}  // namespace dfc
