#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "dfc/autograd.hpp"
#include "dfc/blas.hpp"

namespace dfc {

namespace detail {

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class T>
void check_nchw(const Var<T>& x, const char* op) {
    if (x.value().rank() != 4)
        throw ShapeError(std::string(op) + ": expected NCHW input, got " + shape_str(x.shape()));
}

template <class T, class F, class DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
    const auto& xv = x.value();
    Tensor<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = f(xv[i]);
    return make_result<T>(std::move(y), {x}, [df](Node<T>& self) {
        if (auto* gx = input_grad(self, 0)) {
            const auto& xv = self.inputs[0]->value;
            for (std::size_t i = 0; i < xv.numel(); ++i)
                (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
        }
    });
}

// Grid columns j with 0 <= j*stride - pad + kj < w.
inline std::pair<int, int> valid_columns(int grid_w, int w, int stride, int pad, int kj) {
    const int off = kj - pad;
    int lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    int hi = w - 1 - off < 0 ? 0 : (w - 1 - off) / stride + 1;
    lo = std::min(lo, grid_w);
    hi = std::clamp(hi, lo, grid_w);
    return {lo, hi};
}

// Column layout: row (c*k + ki)*k + kj, column r*grid_w + j for grid rows in [r0, r1).
template <class T>
void im2col(const T* img, int channels, int h, int w, int k, int stride, int pad, int grid_w, int r0,
            int r1, T* col) {
    const int cols = (r1 - r0) * grid_w;
    for (int c = 0; c < channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                T* dst = col + static_cast<std::size_t>((c * k + ki) * k + kj) * cols;
                const auto [lo, hi] = valid_columns(grid_w, w, stride, pad, kj);
                for (int r = r0; r < r1; ++r) {
                    const int iy = r * stride - pad + ki;
                    T* row = dst + static_cast<std::size_t>(r - r0) * grid_w;
                    if (iy < 0 || iy >= h) {
                        std::fill(row, row + grid_w, T{0});
                        continue;
                    }
                    const T* src = img + (static_cast<std::size_t>(c) * h + iy) * w + (kj - pad);
                    std::fill(row, row + lo, T{0});
                    if (stride == 1) std::copy(src + lo, src + hi, row + lo);
                    else
                        for (int j = lo; j < hi; ++j) row[j] = src[j * stride];
                    std::fill(row + hi, row + grid_w, T{0});
                }
            }
}

template <class T>
void col2im(const T* col, int channels, int h, int w, int k, int stride, int pad, int grid_w, int r0,
            int r1, T* img) {
    const int cols = (r1 - r0) * grid_w;
    for (int c = 0; c < channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const T* src = col + static_cast<std::size_t>((c * k + ki) * k + kj) * cols;
                const auto [lo, hi] = valid_columns(grid_w, w, stride, pad, kj);
                for (int r = r0; r < r1; ++r) {
                    const int iy = r * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    const T* row = src + static_cast<std::size_t>(r - r0) * grid_w;
                    T* dst = img + (static_cast<std::size_t>(c) * h + iy) * w + (kj - pad);
                    if (stride == 1)
                        for (int j = lo; j < hi; ++j) dst[j] += row[j];
                    else
                        for (int j = lo; j < hi; ++j) dst[j * stride] += row[j];
                }
            }
}

// Direct accumulation for convolutions with very few output channels, where
// a GEMM over the column buffer is bound by memory traffic.
template <class T>
void conv_direct(const T* img, const T* weight, int channels, int h, int w, int k, int stride, int pad, int cout,
                 int ho, int wo, T* out) {
    for (int o = 0; o < cout; ++o)
        for (int c = 0; c < channels; ++c)
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) {
                    const T wv = weight[((static_cast<std::size_t>(o) * channels + c) * k + ki) * k + kj];
                    const auto [lo, hi] = valid_columns(wo, w, stride, pad, kj);
                    for (int r = 0; r < ho; ++r) {
                        const int iy = r * stride - pad + ki;
                        if (iy < 0 || iy >= h) continue;
                        const T* src = img + (static_cast<std::size_t>(c) * h + iy) * w + (kj - pad);
                        T* dst = out + (static_cast<std::size_t>(o) * ho + r) * wo;
                        if (stride == 1)
                            for (int j = lo; j < hi; ++j) dst[j] += wv * src[j];
                        else
                            for (int j = lo; j < hi; ++j) dst[j] += wv * src[j * stride];
                    }
                }
}

// Grid rows per im2col tile so a column buffer stays near 4M elements.
inline int tile_rows(int col_rows, int grid_w, int grid_h) {
    const long budget = 1L << 22;
    long rows = budget / std::max<long>(1, static_cast<long>(col_rows) * grid_w);
    return static_cast<int>(std::clamp<long>(rows, 1, grid_h));
}

inline int reflect_index(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* g = input_grad(self, k))
                for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = input_grad(self, 1))
            for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * bv[i];
        if (auto* g = input_grad(self, 1))
            for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * av[i];
    });
}

/// y = s * x + b
template <class T>
Var<T> affine(const Var<T>& x, T s, T b = T{0}) {
    return detail::unary(x, [s, b](T v) { return s * v + b; }, [s](T, T) { return s; });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
    return affine(x, s, T{0});
}

template <class T>
Var<T> relu(const Var<T>& x) {
    return detail::unary(x, [](T v) { return v > 0 ? v : T{0}; }, [](T v, T) { return v > 0 ? T{1} : T{0}; });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    return detail::unary(
        x, [slope](T v) { return v > 0 ? v : slope * v; },
        [slope](T v, T) { return v > 0 ? T{1} : slope; });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
    return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return v >= 0 ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v)); },
        [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> exp(const Var<T>& x) {
    return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// exp(x) - 1 without cancellation near zero.
template <class T>
Var<T> expm1(const Var<T>& x) {
    return detail::unary(x, [](T v) { return std::expm1(v); }, [](T, T y) { return y + T{1}; });
}

template <class T>
Var<T> square(const Var<T>& x) {
    return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

/// log(max(x, eps)); the clamped region has zero slope.
template <class T>
Var<T> log_clamped(const Var<T>& x, T eps) {
    return detail::unary(
        x, [eps](T v) { return std::log(std::max(v, eps)); },
        [eps](T v, T) { return v > eps ? T{1} / v : T{0}; });
}

template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
    return detail::unary(
        x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T{1} : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (T v : x.value().values()) s += v;
    return make_result<T>(Tensor<T>::scalar(s), {x}, [](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (auto& v : g->values()) v += self.grad[0];
    });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    const T n = static_cast<T>(x.value().numel());
    return scale(sum(x), T{1} / n);
}

/// Mean elementwise |a - b|; the subgradient at a == b is zero.
template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "mean_abs_diff");
    const auto& av = a.value();
    const auto& bv = b.value();
    T s = 0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += std::abs(av[i] - bv[i]);
    const T n = static_cast<T>(std::max<std::size_t>(1, av.numel()));
    return make_result<T>(Tensor<T>::scalar(s / n), {a, b}, [n](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        const T g = self.grad[0] / n;
        auto* ga = input_grad(self, 0);
        auto* gb = input_grad(self, 1);
        for (std::size_t i = 0; i < av.numel(); ++i) {
            const T d = av[i] - bv[i];
            const T sgn = d > 0 ? T{1} : (d < 0 ? T{-1} : T{0});
            if (ga) (*ga)[i] += g * sgn;
            if (gb) (*gb)[i] -= g * sgn;
        }
    });
}

/// Weighted sum of scalar Vars.
template <class T>
Var<T> weighted_sum(const std::vector<std::pair<T, Var<T>>>& terms) {
    T s = 0;
    std::vector<Var<T>> inputs;
    std::vector<T> weights;
    for (const auto& [w, v] : terms) {
        if (v.value().numel() != 1) throw ShapeError("weighted_sum expects scalar terms");
        s += w * v.item();
        inputs.push_back(v);
        weights.push_back(w);
    }
    return make_result<T>(Tensor<T>::scalar(s), inputs, [weights](Node<T>& self) {
        for (std::size_t k = 0; k < weights.size(); ++k)
            if (auto* g = input_grad(self, k)) (*g)[0] += weights[k] * self.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    for (const auto& x : xs) detail::check_nchw(x, "concat_channels");
    const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int total = 0;
    for (const auto& x : xs) {
        if (x.dim(0) != n || x.dim(2) != h || x.dim(3) != w)
            throw ShapeError("concat_channels: incompatible " + shape_str(x.shape()) + " vs " +
                             shape_str(xs[0].shape()));
        total += x.dim(1);
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> y({n, total, h, w});
    std::vector<int> offsets;
    for (int b = 0; b < n; ++b) {
        int off = 0;
        for (const auto& x : xs) {
            const int c = x.dim(1);
            std::copy_n(x.value().data() + b * c * plane, c * plane, y.data() + (b * total + off) * plane);
            off += c;
        }
    }
    int off = 0;
    for (const auto& x : xs) {
        offsets.push_back(off);
        off += x.dim(1);
    }
    return make_result<T>(std::move(y), xs, [offsets, total, plane, n](Node<T>& self) {
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            auto* g = input_grad(self, k);
            if (!g) continue;
            const int c = self.inputs[k]->value.dim(1);
            for (int b = 0; b < n; ++b) {
                const T* src = self.grad.data() + (b * total + offsets[k]) * plane;
                T* dst = g->data() + b * c * plane;
                for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

template <class T>
Var<T> slice_channels(const Var<T>& x, int begin, int end) {
    detail::check_nchw(x, "slice_channels");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (begin < 0 || end > c || begin >= end) throw ShapeError("slice_channels: bad range");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int cc = end - begin;
    Tensor<T> y({n, cc, h, w});
    for (int b = 0; b < n; ++b)
        std::copy_n(x.value().data() + (b * c + begin) * plane, cc * plane, y.data() + b * cc * plane);
    return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (int b = 0; b < n; ++b) {
                const T* src = self.grad.data() + b * cc * plane;
                T* dst = g->data() + (b * c + begin) * plane;
                for (std::size_t i = 0; i < cc * plane; ++i) dst[i] += src[i];
            }
    });
}

// ---------------------------------------------------------------------------
// Convolutions

/// 2-D convolution with zero padding. `weight` is [out, in, k, k], `bias`
/// is [out] or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
    detail::check_nchw(x, "conv2d");
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin || weight.dim(3) != k)
        throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input " + shape_str(x.shape()) + " too small");
    const int ckk = cin * k * k;
    const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
    const std::size_t in_size = static_cast<std::size_t>(cin) * h * w;
    const int rows = detail::tile_rows(ckk, wo, ho);

    Tensor<T> y({n, cout, ho, wo});
    std::vector<T> col(cout <= 4 ? 0 : static_cast<std::size_t>(ckk) * rows * wo);
    for (int b = 0; b < n; ++b) {
        const T* xb = x.value().data() + b * in_size;
        T* yb = y.data() + b * cout * out_plane;
        if (cout <= 4) detail::conv_direct(xb, weight.value().data(), cin, h, w, k, stride, pad, cout, ho, wo, yb);
        else
        for (int r0 = 0; r0 < ho; r0 += rows) {
            const int r1 = std::min(ho, r0 + rows);
            const int cols = (r1 - r0) * wo;
            detail::im2col(xb, cin, h, w, k, stride, pad, wo, r0, r1, col.data());
            blas::gemm(false, false, cout, cols, ckk, T{1}, weight.value().data(), ckk, col.data(), cols,
                       T{0}, yb + r0 * wo, static_cast<int>(out_plane));
        }
        if (bias.defined())
            for (int o = 0; o < cout; ++o) {
                T* p = yb + o * out_plane;
                const T bv = bias.value()[o];
                for (std::size_t i = 0; i < out_plane; ++i) p[i] += bv;
            }
    }

    std::vector<Var<T>> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(y), inputs, [=](Node<T>& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& wv = self.inputs[1]->value;
        auto* gx = input_grad(self, 0);
        auto* gw = input_grad(self, 1);
        auto* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
        std::vector<T> col(static_cast<std::size_t>(ckk) * rows * wo);
        std::vector<T> dcol(gx ? col.size() : 0);
        for (int b = 0; b < n; ++b) {
            const T* xb = xv.data() + b * in_size;
            const T* gyb = self.grad.data() + b * cout * out_plane;
            if (gb)
                for (int o = 0; o < cout; ++o) {
                    T s = 0;
                    for (std::size_t i = 0; i < out_plane; ++i) s += gyb[o * out_plane + i];
                    (*gb)[o] += s;
                }
            for (int r0 = 0; r0 < ho; r0 += rows) {
                const int r1 = std::min(ho, r0 + rows);
                const int cols = (r1 - r0) * wo;
                if (gw) {
                    detail::im2col(xb, cin, h, w, k, stride, pad, wo, r0, r1, col.data());
                    blas::gemm(false, true, cout, ckk, cols, T{1}, gyb + r0 * wo, static_cast<int>(out_plane),
                               col.data(), cols, T{1}, gw->data(), ckk);
                }
                if (gx) {
                    blas::gemm(true, false, ckk, cols, cout, T{1}, wv.data(), ckk, gyb + r0 * wo,
                               static_cast<int>(out_plane), T{0}, dcol.data(), cols);
                    detail::col2im(dcol.data(), cin, h, w, k, stride, pad, wo, r0, r1, gx->data() + b * in_size);
                }
            }
        }
    });
}

/// Transposed convolution. `weight` is [in, out, k, k]; output size is
/// (h - 1) * stride - 2 * pad + k + output_pad.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad,
                        int output_pad) {
    detail::check_nchw(x, "conv_transpose2d");
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = weight.dim(1), k = weight.dim(2);
    if (weight.dim(0) != cin) throw ShapeError("conv_transpose2d: weight/input channel mismatch");
    const int ho = (h - 1) * stride - 2 * pad + k + output_pad;
    const int wo = (w - 1) * stride - 2 * pad + k + output_pad;
    const int ckk = cout * k * k;
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;

    Tensor<T> y({n, cout, ho, wo});
    std::vector<T> col(static_cast<std::size_t>(ckk) * in_plane);
    for (int b = 0; b < n; ++b) {
        const T* xb = x.value().data() + b * cin * in_plane;
        T* yb = y.data() + b * cout * out_plane;
        blas::gemm(true, false, ckk, static_cast<int>(in_plane), cin, T{1}, weight.value().data(), ckk, xb,
                   static_cast<int>(in_plane), T{0}, col.data(), static_cast<int>(in_plane));
        detail::col2im(col.data(), cout, ho, wo, k, stride, pad, w, 0, h, yb);
        if (bias.defined())
            for (int o = 0; o < cout; ++o) {
                T* p = yb + o * out_plane;
                const T bv = bias.value()[o];
                for (std::size_t i = 0; i < out_plane; ++i) p[i] += bv;
            }
    }

    std::vector<Var<T>> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(y), inputs, [=](Node<T>& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& wv = self.inputs[1]->value;
        auto* gx = input_grad(self, 0);
        auto* gw = input_grad(self, 1);
        auto* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
        std::vector<T> col(static_cast<std::size_t>(ckk) * in_plane);
        for (int b = 0; b < n; ++b) {
            const T* gyb = self.grad.data() + b * cout * out_plane;
            if (gb)
                for (int o = 0; o < cout; ++o) {
                    T s = 0;
                    for (std::size_t i = 0; i < out_plane; ++i) s += gyb[o * out_plane + i];
                    (*gb)[o] += s;
                }
            if (!gx && !gw) continue;
            detail::im2col(gyb, cout, ho, wo, k, stride, pad, w, 0, h, col.data());
            if (gx)
                blas::gemm(false, false, cin, static_cast<int>(in_plane), ckk, T{1}, wv.data(), ckk, col.data(),
                           static_cast<int>(in_plane), T{1}, gx->data() + b * cin * in_plane,
                           static_cast<int>(in_plane));
            if (gw)
                blas::gemm(false, true, cin, ckk, static_cast<int>(in_plane), T{1}, xv.data() + b * cin * in_plane,
                           static_cast<int>(in_plane), col.data(), static_cast<int>(in_plane), T{1}, gw->data(), ckk);
        }
    });
}

template <class T>
Var<T> reflection_pad2d(const Var<T>& x, int pad) {
    detail::check_nchw(x, "reflection_pad2d");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (pad >= h || pad >= w)
        throw ShapeError("reflection_pad2d: pad " + std::to_string(pad) + " too large for " + shape_str(x.shape()));
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    Tensor<T> y({n, c, hp, wp});
    const auto& xv = x.value();
    for (int p = 0; p < n * c; ++p)
        for (int i = 0; i < hp; ++i) {
            const int si = detail::reflect_index(i - pad, h);
            for (int j = 0; j < wp; ++j)
                y.data()[(static_cast<std::size_t>(p) * hp + i) * wp + j] =
                    xv.data()[(static_cast<std::size_t>(p) * h + si) * w + detail::reflect_index(j - pad, w)];
        }
    return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (int p = 0; p < n * c; ++p)
            for (int i = 0; i < hp; ++i) {
                const int si = detail::reflect_index(i - pad, h);
                for (int j = 0; j < wp; ++j)
                    g->data()[(static_cast<std::size_t>(p) * h + si) * w + detail::reflect_index(j - pad, w)] +=
                        self.grad.data()[(static_cast<std::size_t>(p) * hp + i) * wp + j];
            }
    });
}

/// Mean over non-overlapping k x k windows.
template <class T>
Var<T> avg_pool2d(const Var<T>& x, int k) {
    detail::check_nchw(x, "avg_pool2d");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % k != 0 || w % k != 0)
        throw ShapeError("avg_pool2d: " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
    const int ho = h / k, wo = w / k;
    const T inv = T{1} / static_cast<T>(k * k);
    Tensor<T> y({n, c, ho, wo});
    const auto& xv = x.value();
    for (int p = 0; p < n * c; ++p)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                y.data()[(static_cast<std::size_t>(p) * ho + i / k) * wo + j / k] +=
                    xv.data()[(static_cast<std::size_t>(p) * h + i) * w + j] * inv;
    return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (int p = 0; p < n * c; ++p)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    g->data()[(static_cast<std::size_t>(p) * h + i) * w + j] +=
                        self.grad.data()[(static_cast<std::size_t>(p) * ho + i / k) * wo + j / k] * inv;
    });
}

/// k x k max pooling with stride k; trailing rows and columns that do not fill a window are dropped.
template <class T>
Var<T> max_pool2d(const Var<T>& x, int k) {
    detail::check_nchw(x, "max_pool2d");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h / k, wo = w / k;
    if (ho == 0 || wo == 0) throw ShapeError("max_pool2d: " + shape_str(x.shape()) + " smaller than window");
    Tensor<T> y({n, c, ho, wo});
    std::vector<std::size_t> arg(y.numel());
    const auto& xv = x.value();
    for (int p = 0; p < n * c; ++p)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                std::size_t best = (static_cast<std::size_t>(p) * h + i * k) * w + j * k;
                for (int a = 0; a < k; ++a)
                    for (int b = 0; b < k; ++b) {
                        const std::size_t q = (static_cast<std::size_t>(p) * h + i * k + a) * w + j * k + b;
                        if (xv[q] > xv[best]) best = q;
                    }
                const std::size_t o = (static_cast<std::size_t>(p) * ho + i) * wo + j;
                y[o] = xv[best];
                arg[o] = best;
            }
    return make_result<T>(std::move(y), {x}, [arg = std::move(arg)](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t o = 0; o < arg.size(); ++o) (*g)[arg[o]] += self.grad[o];
    });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
    detail::check_nchw(x, "upsample_nearest");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h * factor, wo = w * factor;
    Tensor<T> y({n, c, ho, wo});
    const auto& xv = x.value();
    for (int p = 0; p < n * c; ++p)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
                y.data()[(static_cast<std::size_t>(p) * ho + i) * wo + j] =
                    xv.data()[(static_cast<std::size_t>(p) * h + i / factor) * w + j / factor];
    return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (int p = 0; p < n * c; ++p)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j)
                    g->data()[(static_cast<std::size_t>(p) * h + i / factor) * w + j / factor] +=
                        self.grad.data()[(static_cast<std::size_t>(p) * ho + i) * wo + j];
    });
}

/// Softmax of `inv_temperature * x` over the spatial cells of every
/// (sample, channel) plane independently.
template <class T>
Var<T> spatial_softmax(const Var<T>& x, T inv_temperature) {
    detail::check_nchw(x, "spatial_softmax");
    const std::size_t planes = static_cast<std::size_t>(x.dim(0)) * x.dim(1);
    const std::size_t cells = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> y(x.shape());
    const auto& xv = x.value();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.data() + p * cells;
        T* dst = y.data() + p * cells;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < cells; ++i) mx = std::max(mx, src[i]);
        T z = 0;
        for (std::size_t i = 0; i < cells; ++i) {
            dst[i] = std::exp(inv_temperature * (src[i] - mx));
            z += dst[i];
        }
        for (std::size_t i = 0; i < cells; ++i) dst[i] /= z;
    }
    return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t p = 0; p < planes; ++p) {
            const T* yv = self.value.data() + p * cells;
            const T* gy = self.grad.data() + p * cells;
            T dot = 0;
            for (std::size_t i = 0; i < cells; ++i) dot += gy[i] * yv[i];
            T* gx = g->data() + p * cells;
            for (std::size_t i = 0; i < cells; ++i) gx[i] += inv_temperature * yv[i] * (gy[i] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Batch normalization

template <class T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
};

/// Training mode normalizes with batch statistics over (N, H, W) and updates
/// the running estimates; evaluation mode uses the running estimates.
template <class T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                    bool training) {
    detail::check_nchw(x, "batch_norm2d");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const std::size_t count = plane * n;
    const auto& xv = x.value();
    std::vector<T> mu(c), inv_std(c);
    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            T s = 0;
            for (int b = 0; b < n; ++b) {
                const T* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            const T m = s / static_cast<T>(count);
            T v = 0;
            for (int b = 0; b < n; ++b) {
                const T* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
            }
            v /= static_cast<T>(count);
            mu[ch] = m;
            inv_std[ch] = T{1} / std::sqrt(v + state.eps);
            const T unbiased = count > 1 ? v * static_cast<T>(count) / static_cast<T>(count - 1) : v;
            state.running_mean[ch] = (T{1} - state.momentum) * state.running_mean[ch] + state.momentum * m;
            state.running_var[ch] = (T{1} - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mu[ch] = state.running_mean[ch];
            inv_std[ch] = T{1} / std::sqrt(state.running_var[ch] + state.eps);
        }
    }

    Tensor<T> xhat(x.shape());
    Tensor<T> y(x.shape());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
            const T g = gamma.value()[ch], bt = beta.value()[ch];
            for (std::size_t i = 0; i < plane; ++i) {
                xhat[off + i] = (xv[off + i] - mu[ch]) * inv_std[ch];
                y[off + i] = g * xhat[off + i] + bt;
            }
        }

    return make_result<T>(std::move(y), {x, gamma, beta},
                          [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto* gx = input_grad(self, 0);
        auto* gg = input_grad(self, 1);
        auto* gbeta = input_grad(self, 2);
        const auto& gv = self.inputs[1]->value;
        for (int ch = 0; ch < c; ++ch) {
            T sum_dy = 0, sum_dy_xhat = 0;
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_dy += self.grad[off + i];
                    sum_dy_xhat += self.grad[off + i] * xhat[off + i];
                }
            }
            if (gg) (*gg)[ch] += sum_dy_xhat;
            if (gbeta) (*gbeta)[ch] += sum_dy;
            if (!gx) continue;
            const T scale_x = gv[ch] * inv_std[ch];
            const T mean_dy = sum_dy / static_cast<T>(count);
            const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(count);
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    if (training)
                        (*gx)[off + i] += scale_x * (self.grad[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
                    else
                        (*gx)[off + i] += scale_x * self.grad[off + i];
                }
            }
        }
    });
}

}  // namespace dfc
