#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dfc/archive.hpp"
#include "dfc/layers.hpp"
#include "dfc/types.hpp"

namespace dfc {

// ---------------------------------------------------------------------------
// Skeleton conventions

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// COCO-18 joint order: nose, neck, right shoulder/elbow/wrist, left
/// shoulder/elbow/wrist, right hip/knee/ankle, left hip/knee/ankle, right
/// eye, left eye, right ear, left ear.
inline constexpr int kJoints = 18;

/// The 18 limbs carried by the part affinity fields. Limb l occupies PAF
/// channels 2l (x) and 2l+1 (y); channels 36 and 37 are the background pair.
inline constexpr std::array<std::pair<int, int>, 18> kLimbs = {{
    {1, 2}, {1, 5}, {2, 3}, {3, 4}, {5, 6}, {6, 7}, {1, 8}, {8, 9}, {9, 10},
    {1, 11}, {11, 12}, {12, 13}, {1, 0}, {0, 14}, {14, 16}, {0, 15}, {15, 17}, {2, 16},
}};

/// Joints in normalized image coordinates: x to the right, y down, both in [0, 1].
struct SyntheticSkeleton {
    std::array<Point2, kJoints> joints{};
};

/// Joint marker colors in [-1, 1] RGB, one per joint; all lie on the
/// {-1, 0, 1}^3 lattice so they stay separable from mid-tone colors.
inline const std::array<std::array<double, 3>, kJoints>& joint_palette() {
    static const std::array<std::array<double, 3>, kJoints> palette = {{
        {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, 1, -1}, {1, -1, 1}, {-1, 1, 1},
        {1, 0, -1}, {0, 1, -1}, {-1, 1, 0}, {-1, 0, 1}, {0, -1, 1}, {1, -1, 0},
        {0, 0, 1}, {1, 0, 0}, {0, 1, 0}, {0, 0, -1}, {-1, 0, 0}, {0, -1, 0},
    }};
    return palette;
}

template <class T>
struct PoseMaps {
    Var<T> heatmaps;  // [N, 18, H/8, W/8]
    Var<T> pafs;      // [N, 38, H/8, W/8]
};

template <class T>
struct RenderedPose {
    Tensor<T> heatmaps;  // [18, h, w]
    Tensor<T> pafs;      // [38, h, w]
};

/// Gaussian joint blobs (sigma one cell, peak 1) and unit-vector limb bands
/// (half-width half a cell) on a grid_h x grid_w lattice. A joint at
/// normalized (x, y) sits at cell coordinates (x * grid_w, y * grid_h).
template <class T>
RenderedPose<T> render_synthetic_pose(const SyntheticSkeleton& skel, int grid_h, int grid_w) {
    if (grid_h <= 0 || grid_w <= 0) throw ShapeError("render_synthetic_pose: empty grid");
    for (const auto& j : skel.joints)
        if (!(j.x >= 0.0 && j.x <= 1.0 && j.y >= 0.0 && j.y <= 1.0))
            throw GeometryError("skeleton joint outside [0,1]^2");
    for (const auto& [a, b] : kLimbs) {
        const double dx = skel.joints[b].x - skel.joints[a].x, dy = skel.joints[b].y - skel.joints[a].y;
        if (std::hypot(dx * grid_w, dy * grid_h) < 1e-9)
            throw GeometryError("zero-length limb between joints " + std::to_string(a) + " and " + std::to_string(b));
    }

    RenderedPose<T> out{Tensor<T>({kHeatmapChannels, grid_h, grid_w}), Tensor<T>({kPafChannels, grid_h, grid_w})};
    for (int c = 0; c < kJoints; ++c) {
        const double u = skel.joints[c].x * grid_w, v = skel.joints[c].y * grid_h;
        T* plane = out.heatmaps.data() + static_cast<std::size_t>(c) * grid_h * grid_w;
        double peak = 0.0;
        for (int i = 0; i < grid_h; ++i)
            for (int j = 0; j < grid_w; ++j) {
                const double g = std::exp(-((j - u) * (j - u) + (i - v) * (i - v)) / 2.0);
                plane[i * grid_w + j] = static_cast<T>(g);
                peak = std::max(peak, g);
            }
        for (int i = 0; i < grid_h * grid_w; ++i) plane[i] = static_cast<T>(plane[i] / peak);
    }
    for (std::size_t l = 0; l < kLimbs.size(); ++l) {
        const auto [a, b] = kLimbs[l];
        const double ax = skel.joints[a].x * grid_w, ay = skel.joints[a].y * grid_h;
        const double dx = skel.joints[b].x * grid_w - ax, dy = skel.joints[b].y * grid_h - ay;
        const double len = std::hypot(dx, dy);
        const double ux = dx / len, uy = dy / len;
        T* px = out.pafs.data() + (2 * l) * grid_h * grid_w;
        T* py = out.pafs.data() + (2 * l + 1) * grid_h * grid_w;
        for (int i = 0; i < grid_h; ++i)
            for (int j = 0; j < grid_w; ++j) {
                const double rx = j - ax, ry = i - ay;
                const double along = rx * ux + ry * uy;
                const double across = std::abs(rx * uy - ry * ux);
                if (along >= -1e-12 && along <= len + 1e-12 && across <= 0.5 + 1e-12) {
                    px[i * grid_w + j] = static_cast<T>(ux);
                    py[i * grid_w + j] = static_cast<T>(uy);
                }
            }
    }
    return out;
}

/// Temperature softmax over the spatial cells of each heatmap channel.
template <class T>
Var<T> amplify_keypoints(const Var<T>& heatmaps, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("amplifier temperature must be > 0");
    return spatial_softmax(heatmaps, static_cast<T>(1.0 / temperature));
}

// ---------------------------------------------------------------------------
// Estimators

/// A frozen map from images [N,3,H,W] to heatmaps and part affinity fields
/// at 1/8 resolution. Implementations never expose trainable parameters.
template <class T>
class PoseEstimator {
public:
    virtual ~PoseEstimator() = default;
    virtual PoseMaps<T> run(const Var<T>& images) const = 0;
    /// Weights that must stay untouched by training.
    virtual std::vector<const Tensor<T>*> frozen_weights() const { return {}; }
};

/// Runs the estimator and enforces its output contract; heatmaps are
/// clamped to [0, 1].
template <class T>
PoseMaps<T> estimate_pose(const Var<T>& images, const PoseEstimator<T>& estimator) {
    if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) % kDownsample != 0 ||
        images.dim(3) % kDownsample != 0)
        throw ShapeError("estimate_pose: expected [N,3,H,W] with H, W divisible by 8, got " +
                         shape_str(images.shape()));
    PoseMaps<T> maps = estimator.run(images);
    const int n = images.dim(0), h = images.dim(2) / kDownsample, w = images.dim(3) / kDownsample;
    if (!maps.heatmaps.defined() || !maps.pafs.defined()) throw EstimatorError("estimator returned no output");
    if (maps.heatmaps.shape() != Shape{n, kHeatmapChannels, h, w} || maps.pafs.shape() != Shape{n, kPafChannels, h, w})
        throw EstimatorError("estimator output shapes " + shape_str(maps.heatmaps.shape()) + " / " +
                             shape_str(maps.pafs.shape()) + " do not match the input " + shape_str(images.shape()));
    maps.heatmaps = clamp(maps.heatmaps, T{0}, T{1});
    return maps;
}

template <class T>
PoseMaps<T> estimate_pose(const BasicImage<T>& image, const PoseEstimator<T>& estimator) {
    return estimate_pose(image.as_batch(), estimator);
}

/// Test estimator: looks up the skeleton of each image and renders it.
/// Output depends on the skeleton only and carries no gradient.
template <class T>
class SkeletonPoseEstimator final : public PoseEstimator<T> {
public:
    using Locator = std::function<SyntheticSkeleton(const Tensor<T>& image)>;

    explicit SkeletonPoseEstimator(Locator locate) : locate_(std::move(locate)) {}

    PoseMaps<T> run(const Var<T>& images) const override {
        const int n = images.dim(0), h = images.dim(2), w = images.dim(3);
        const int gh = h / kDownsample, gw = w / kDownsample;
        const std::size_t plane = static_cast<std::size_t>(gh) * gw;
        Tensor<T> heat({n, kHeatmapChannels, gh, gw}), paf({n, kPafChannels, gh, gw});
        const std::size_t img_size = 3ull * h * w;
        for (int b = 0; b < n; ++b) {
            std::vector<T> px(images.value().data() + b * img_size, images.value().data() + (b + 1) * img_size);
            auto r = render_synthetic_pose<T>(locate_(Tensor<T>({3, h, w}, std::move(px))), gh, gw);
            std::copy_n(r.heatmaps.data(), r.heatmaps.numel(), heat.data() + b * kHeatmapChannels * plane);
            std::copy_n(r.pafs.data(), r.pafs.numel(), paf.data() + b * kPafChannels * plane);
        }
        return {Var<T>::constant(std::move(heat)), Var<T>::constant(std::move(paf))};
    }

private:
    Locator locate_;
};

namespace detail {

// Forward-mode dual number over the four limb endpoint coordinates.
struct Dual4 {
    double v = 0.0;
    std::array<double, 4> d{};

    Dual4() = default;
    Dual4(double value) : v(value) {}  // NOLINT: implicit lift of constants
    static Dual4 seed(double value, int k) {
        Dual4 r(value);
        r.d[static_cast<std::size_t>(k)] = 1.0;
        return r;
    }
    friend Dual4 operator+(Dual4 a, const Dual4& b) {
        a.v += b.v;
        for (int k = 0; k < 4; ++k) a.d[k] += b.d[k];
        return a;
    }
    friend Dual4 operator-(Dual4 a, const Dual4& b) {
        a.v -= b.v;
        for (int k = 0; k < 4; ++k) a.d[k] -= b.d[k];
        return a;
    }
    friend Dual4 operator*(const Dual4& a, const Dual4& b) {
        Dual4 r(a.v * b.v);
        for (int k = 0; k < 4; ++k) r.d[k] = a.d[k] * b.v + a.v * b.d[k];
        return r;
    }
    friend Dual4 operator/(const Dual4& a, const Dual4& b) {
        Dual4 r(a.v / b.v);
        for (int k = 0; k < 4; ++k) r.d[k] = (a.d[k] * b.v - a.v * b.d[k]) / (b.v * b.v);
        return r;
    }
};

inline double value_of(double x) { return x; }
inline double value_of(const Dual4& x) { return x.v; }
inline Dual4 exp_of(const Dual4& x) {
    Dual4 r(std::exp(x.v));
    for (int k = 0; k < 4; ++k) r.d[k] = r.v * x.d[k];
    return r;
}
inline double exp_of(double x) { return std::exp(x); }
inline Dual4 sqrt_of(const Dual4& x) {
    Dual4 r(std::sqrt(x.v));
    for (int k = 0; k < 4; ++k) r.d[k] = x.d[k] / (2.0 * r.v);
    return r;
}
inline double sqrt_of(double x) { return std::sqrt(x); }

inline constexpr double kLimbEps = 1e-6;

// Unit limb direction times a Gaussian band around segment a->b at cell p.
template <class S>
void limb_band(const S& ax, const S& ay, const S& bx, const S& by, double px, double py, double inv_two_sigma2,
               S& out_x, S& out_y) {
    const S dx = bx - ax, dy = by - ay;
    const S len2 = dx * dx + dy * dy + S(kLimbEps);
    S t = ((S(px) - ax) * dx + (S(py) - ay) * dy) / len2;
    if (value_of(t) < 0.0) t = S(0.0);
    else if (value_of(t) > 1.0) t = S(1.0);
    const S rx = S(px) - (ax + t * dx), ry = S(py) - (ay + t * dy);
    const S g = exp_of(S(0.0) - (rx * rx + ry * ry) * S(inv_two_sigma2));
    const S len = sqrt_of(len2);
    out_x = dx / len * g;
    out_y = dy / len * g;
}

}  // namespace detail

/// Part affinity fields from heatmaps: each limb becomes a Gaussian band
/// (width `sigma` cells) between the soft centroids of its two joint
/// heatmaps, carrying the unit limb direction. Differentiable in the heatmaps.
template <class T>
Var<T> limb_fields(const Var<T>& heatmaps, double sigma) {
    const int n = heatmaps.dim(0), h = heatmaps.dim(2), w = heatmaps.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    // Per (sample, joint): mass Z and centroid (mx, my) in cell coordinates.
    std::vector<double> mass(static_cast<std::size_t>(n) * kJoints), cx(mass.size()), cy(mass.size());
    const auto& hv = heatmaps.value();
    for (int b = 0; b < n; ++b)
        for (int c = 0; c < kJoints; ++c) {
            const T* p = hv.data() + (static_cast<std::size_t>(b) * kHeatmapChannels + c) * plane;
            double z = 0, sx = 0, sy = 0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const double v = p[i * w + j];
                    z += v;
                    sx += v * j;
                    sy += v * i;
                }
            const std::size_t k = static_cast<std::size_t>(b) * kJoints + c;
            mass[k] = z + detail::kLimbEps;
            cx[k] = sx / mass[k];
            cy[k] = sy / mass[k];
        }

    Tensor<T> out({n, kPafChannels, h, w});
    for (int b = 0; b < n; ++b)
        for (std::size_t l = 0; l < kLimbs.size(); ++l) {
            const std::size_t ka = static_cast<std::size_t>(b) * kJoints + kLimbs[l].first;
            const std::size_t kb = static_cast<std::size_t>(b) * kJoints + kLimbs[l].second;
            T* ox = out.data() + (static_cast<std::size_t>(b) * kPafChannels + 2 * l) * plane;
            T* oy = ox + plane;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    double vx, vy;
                    detail::limb_band(cx[ka], cy[ka], cx[kb], cy[kb], double(j), double(i), inv2s2, vx, vy);
                    ox[i * w + j] = static_cast<T>(vx);
                    oy[i * w + j] = static_cast<T>(vy);
                }
        }

    return make_result<T>(std::move(out), {heatmaps}, [=](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        std::vector<double> gcx(mass.size(), 0.0), gcy(mass.size(), 0.0);
        for (int b = 0; b < n; ++b)
            for (std::size_t l = 0; l < kLimbs.size(); ++l) {
                const std::size_t ka = static_cast<std::size_t>(b) * kJoints + kLimbs[l].first;
                const std::size_t kb = static_cast<std::size_t>(b) * kJoints + kLimbs[l].second;
                const auto ax = detail::Dual4::seed(cx[ka], 0), ay = detail::Dual4::seed(cy[ka], 1);
                const auto bx = detail::Dual4::seed(cx[kb], 2), by = detail::Dual4::seed(cy[kb], 3);
                const T* gx = self.grad.data() + (static_cast<std::size_t>(b) * kPafChannels + 2 * l) * plane;
                const T* gy = gx + plane;
                std::array<double, 4> acc{};
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        const double wx = gx[i * w + j], wy = gy[i * w + j];
                        if (wx == 0.0 && wy == 0.0) continue;
                        detail::Dual4 vx, vy;
                        detail::limb_band(ax, ay, bx, by, double(j), double(i), inv2s2, vx, vy);
                        for (int k = 0; k < 4; ++k) acc[k] += wx * vx.d[k] + wy * vy.d[k];
                    }
                gcx[ka] += acc[0];
                gcy[ka] += acc[1];
                gcx[kb] += acc[2];
                gcy[kb] += acc[3];
            }
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < kJoints; ++c) {
                const std::size_t k = static_cast<std::size_t>(b) * kJoints + c;
                if (gcx[k] == 0.0 && gcy[k] == 0.0) continue;
                T* gp = g->data() + (static_cast<std::size_t>(b) * kHeatmapChannels + c) * plane;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        gp[i * w + j] += static_cast<T>((gcx[k] * (j - cx[k]) + gcy[k] * (i - cy[k])) / mass[k]);
            }
    });
}

/// Differentiable estimator for stick-figure renders whose joints are
/// painted with `joint_palette()` colors. A fixed 1x1 convolution scores
/// color proximity per pixel, 8x8 average pooling gives cell responses, and
/// limb fields follow from the heatmap centroids.
template <class T>
class ColorKeyedPoseEstimator final : public PoseEstimator<T> {
public:
    struct Options {
        double color_sigma = 0.2;
        double gain = 10.0;
        double band_sigma = 1.0;
    };

    ColorKeyedPoseEstimator() : ColorKeyedPoseEstimator(Options{}) {}
    explicit ColorKeyedPoseEstimator(Options opt) : opt_(opt) {
        // -|x - k|^2 / (2 s^2) = (2 k.x - x.x - k.k) / (2 s^2), with input [x, x^2].
        Tensor<T> w({kJoints, 6, 1, 1}), b({kJoints});
        const double inv = 1.0 / (2.0 * opt.color_sigma * opt.color_sigma);
        for (int c = 0; c < kJoints; ++c) {
            const auto& k = joint_palette()[static_cast<std::size_t>(c)];
            for (int ch = 0; ch < 3; ++ch) {
                w[c * 6 + ch] = static_cast<T>(2.0 * k[ch] * inv);
                w[c * 6 + 3 + ch] = static_cast<T>(-inv);
            }
            b[c] = static_cast<T>(-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * inv);
        }
        weight_ = Var<T>::constant(std::move(w));
        bias_ = Var<T>::constant(std::move(b));
    }

    PoseMaps<T> run(const Var<T>& images) const override {
        Var<T> features = concat_channels<T>({images, square(images)});
        Var<T> response = exp(conv2d(features, weight_, bias_, 1, 0));
        Var<T> pooled = avg_pool2d(response, kDownsample);
        // 1 - exp(-g p), kept accurate for the tiny responses of absent colors.
        Var<T> heat = scale(expm1(scale(pooled, static_cast<T>(-opt_.gain))), T{-1});
        Var<T> limbs = limb_fields(heat, opt_.band_sigma);
        const int n = images.dim(0), h = heat.dim(2), w = heat.dim(3);
        Var<T> background = Var<T>::constant(Tensor<T>({n, kPafChannels - 2 * static_cast<int>(kLimbs.size()), h, w}));
        return {heat, concat_channels<T>({slice_channels(limbs, 0, 2 * static_cast<int>(kLimbs.size())), background})};
    }

    std::vector<const Tensor<T>*> frozen_weights() const override { return {&weight_.value(), &bias_.value()}; }

private:
    Options opt_;
    Var<T> weight_, bias_;
};

/// Generic frozen convolutional estimator: three stride-2 3x3 convolutions
/// (3 -> 32 -> 64 -> 56 channels) with sigmoid heatmaps and tanh fields.
/// Weights come from a seed or from a tensor file with keys conv{1,2,3}.{weight,bias}.
template <class T>
class ConvPoseEstimator final : public PoseEstimator<T> {
public:
    static constexpr std::array<int, 4> kWidths = {3, 32, 64, kPoseChannels};

    explicit ConvPoseEstimator(std::uint64_t seed) {
        Rng rng(seed);
        for (int i = 0; i < 3; ++i) {
            const int in = kWidths[i], out = kWidths[i + 1];
            weights_[i] = nn::normal_tensor<T>({out, in, 3, 3}, 0.0, std::sqrt(2.0 / (in * 9)), rng);
            biases_[i] = nn::uniform_tensor<T>({out}, 0.1, rng);
        }
    }

    explicit ConvPoseEstimator(const std::filesystem::path& weights_file) {
        auto tensors = load_tensor_file<T>(weights_file);
        for (int i = 0; i < 3; ++i) {
            const std::string base = "conv" + std::to_string(i + 1);
            auto w = tensors.find(base + ".weight");
            auto b = tensors.find(base + ".bias");
            if (w == tensors.end() || b == tensors.end())
                throw EstimatorError(weights_file.string() + ": missing " + base + " weights");
            expect_shape(w->second, {kWidths[i + 1], kWidths[i], 3, 3}, "estimator weight");
            expect_shape(b->second, {kWidths[i + 1]}, "estimator bias");
            weights_[i] = w->second;
            biases_[i] = b->second;
        }
    }

    std::map<std::string, Tensor<T>> export_weights() const {
        std::map<std::string, Tensor<T>> out;
        for (int i = 0; i < 3; ++i) {
            out["conv" + std::to_string(i + 1) + ".weight"] = weights_[i];
            out["conv" + std::to_string(i + 1) + ".bias"] = biases_[i];
        }
        return out;
    }

    PoseMaps<T> run(const Var<T>& images) const override {
        Var<T> x = images;
        for (int i = 0; i < 3; ++i) {
            x = conv2d(x, Var<T>::constant(weights_[i]), Var<T>::constant(biases_[i]), 2, 1);
            if (i < 2) x = relu(x);
        }
        return {sigmoid(slice_channels(x, 0, kHeatmapChannels)), tanh(slice_channels(x, kHeatmapChannels, kPoseChannels))};
    }

    std::vector<const Tensor<T>*> frozen_weights() const override {
        std::vector<const Tensor<T>*> out;
        for (int i = 0; i < 3; ++i) {
            out.push_back(&weights_[i]);
            out.push_back(&biases_[i]);
        }
        return out;
    }

private:
    std::array<Tensor<T>, 3> weights_, biases_;
};

template <class T>
std::shared_ptr<const PoseEstimator<T>> make_pose_estimator(const ModelConfig& cfg) {
    if (cfg.estimator_kind == "synthetic") return std::make_shared<ColorKeyedPoseEstimator<T>>();
    if (cfg.estimator_kind == "conv") {
        if (!cfg.estimator_weights.empty())
            return std::make_shared<ConvPoseEstimator<T>>(std::filesystem::path(cfg.estimator_weights));
        return std::make_shared<ConvPoseEstimator<T>>(cfg.estimator_seed);
    }
    throw EstimatorError("unknown estimator kind '" + cfg.estimator_kind + "'");
}

// ---------------------------------------------------------------------------
// Pose refiner

/// 7x7 reflection-padded stem (56 -> b channels), three 3x3 channel
/// upsampling blocks (b -> 2b -> 4b -> 8b) and five residual blocks, all
/// stride 1.
template <class T>
class PoseRefiner {
public:
    PoseRefiner() = default;
    PoseRefiner(int base, Rng& rng)
        : stem_(kPoseChannels, base, {.kernel = 7, .reflect_pad = 3}, rng) {
        int ch = base;
        for (auto& blk : up_) {
            blk = nn::ConvBlock<T>(ch, ch * 2, {.kernel = 3, .zero_pad = 1}, rng);
            ch *= 2;
        }
        for (auto& r : res_) r = nn::ResidualBlock<T>(ch, ch, rng);
    }

    Var<T> operator()(const Var<T>& heatmaps, const Var<T>& pafs, Mode mode) {
        if (heatmaps.value().rank() != 4 || pafs.value().rank() != 4 || heatmaps.dim(1) != kHeatmapChannels ||
            pafs.dim(1) != kPafChannels || heatmaps.dim(0) != pafs.dim(0) || heatmaps.dim(2) != pafs.dim(2) ||
            heatmaps.dim(3) != pafs.dim(3))
            throw ShapeError("refine_pose: incompatible inputs " + shape_str(heatmaps.shape()) + " and " +
                             shape_str(pafs.shape()));
        Var<T> x = stem_(concat_channels<T>({heatmaps, pafs}), mode);
        for (auto& blk : up_) x = blk(x, mode);
        for (auto& r : res_) x = r(x, mode);
        return x;
    }

    void visit(const Visitor<T>& v, const std::string& prefix) {
        stem_.visit(v, join_name(prefix, "stem"));
        for (std::size_t i = 0; i < up_.size(); ++i) up_[i].visit(v, join_name(prefix, "up" + std::to_string(i)));
        for (std::size_t i = 0; i < res_.size(); ++i) res_[i].visit(v, join_name(prefix, "res" + std::to_string(i)));
    }

private:
    nn::ConvBlock<T> stem_;
    std::array<nn::ConvBlock<T>, 3> up_;
    std::array<nn::ResidualBlock<T>, 5> res_;
};

/// M(x): estimate, optionally amplify the heatmaps, refine.
template <class T>
Var<T> encode_pose(const Var<T>& images, const PoseEstimator<T>& estimator, PoseRefiner<T>& refiner,
                   double temperature, bool use_amplifier, Mode mode) {
    PoseMaps<T> maps = estimate_pose(images, estimator);
    Var<T> heat = use_amplifier ? amplify_keypoints(maps.heatmaps, temperature) : maps.heatmaps;
    return refiner(heat, maps.pafs, mode);
}

}  // namespace dfc
