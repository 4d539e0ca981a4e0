#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dfc/types.hpp"

namespace dfc {

namespace detail {

template <class T>
void expect_same_size(const BasicImage<T>& a, const BasicImage<T>& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ShapeError(std::string(what) + ": images differ in size (" + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()) + ")");
}

}  // namespace detail

/// Mean squared error over all pixels and channels in [0, 255] space.
template <class T>
double mse(const BasicImage<T>& a, const BasicImage<T>& b) {
    detail::expect_same_size(a, b, "mse");
    const auto& ta = a.tensor();
    const auto& tb = b.tensor();
    double s = 0.0;
    for (std::size_t i = 0; i < ta.numel(); ++i) {
        const double d = (static_cast<double>(ta[i]) - static_cast<double>(tb[i])) * 127.5;
        s += d * d;
    }
    return s / static_cast<double>(ta.numel());
}

/// 10 log10(255^2 / mse); +infinity for identical images.
inline double psnr_from_mse(double m) {
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / m);
}

template <class T>
double psnr(const BasicImage<T>& a, const BasicImage<T>& b) {
    return psnr_from_mse(mse(a, b));
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = (0.01 * 255.0) * (0.01 * 255.0);
inline constexpr double kSsimC2 = (0.03 * 255.0) * (0.03 * 255.0);

/// Normalized 11-tap Gaussian, sigma 1.5. The 2-D window is its outer product.
inline const std::array<double, kSsimWindow>& ssim_taps() {
    static const std::array<double, kSsimWindow> taps = [] {
        std::array<double, kSsimWindow> t{};
        double s = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double x = i - kSsimWindow / 2;
            t[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
            s += t[static_cast<std::size_t>(i)];
        }
        for (auto& v : t) v /= s;
        return t;
    }();
    return taps;
}

/// Mean SSIM of two single-channel planes (row-major, [0,255] scale) over
/// every fully contained 11x11 window. Without `luminance` only the
/// contrast-structure factor is averaged.
inline double ssim_plane(const double* a, const double* b, int h, int w, bool luminance = true) {
    if (h < kSsimWindow || w < kSsimWindow)
        throw TooSmallError("ssim needs at least 11x11 pixels, got " + std::to_string(w) + "x" + std::to_string(h));
    const auto& g = ssim_taps();
    const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
    // Horizontal pass for the five moments, then vertical.
    std::array<std::vector<double>, 5> horiz;
    for (auto& v : horiz) v.assign(static_cast<std::size_t>(h) * ow, 0.0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < ow; ++j) {
            double m[5] = {0, 0, 0, 0, 0};
            for (int k = 0; k < kSsimWindow; ++k) {
                const double x = a[static_cast<std::size_t>(i) * w + j + k], y = b[static_cast<std::size_t>(i) * w + j + k];
                const double gk = g[static_cast<std::size_t>(k)];
                m[0] += gk * x;
                m[1] += gk * y;
                m[2] += gk * x * x;
                m[3] += gk * y * y;
                m[4] += gk * x * y;
            }
            for (int q = 0; q < 5; ++q) horiz[static_cast<std::size_t>(q)][static_cast<std::size_t>(i) * ow + j] = m[q];
        }
    double total = 0.0;
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
            double m[5] = {0, 0, 0, 0, 0};
            for (int k = 0; k < kSsimWindow; ++k) {
                const double gk = g[static_cast<std::size_t>(k)];
                for (int q = 0; q < 5; ++q) m[q] += gk * horiz[static_cast<std::size_t>(q)][static_cast<std::size_t>(i + k) * ow + j];
            }
            const double mx = m[0], my = m[1];
            const double vx = m[2] - mx * mx, vy = m[3] - my * my, cxy = m[4] - mx * my;
            const double cs = (2 * cxy + kSsimC2) / (vx + vy + kSsimC2);
            total += luminance ? cs * (2 * mx * my + kSsimC1) / (mx * mx + my * my + kSsimC1) : cs;
        }
    return total / (static_cast<double>(oh) * ow);
}

/// Mean of the per-channel SSIM on [0, 255] pixel values.
template <class T>
double ssim(const BasicImage<T>& a, const BasicImage<T>& b, bool luminance = true) {
    detail::expect_same_size(a, b, "ssim");
    const int h = a.height(), w = a.width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> pa(plane), pb(plane);
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            pa[i] = (static_cast<double>(a.tensor()[c * plane + i]) + 1.0) * 127.5;
            pb[i] = (static_cast<double>(b.tensor()[c * plane + i]) + 1.0) * 127.5;
        }
        s += ssim_plane(pa.data(), pb.data(), h, w, luminance);
    }
    return s / 3.0;
}

}  // namespace dfc
