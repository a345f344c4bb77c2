#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "attnconv/parallel.hpp"
#include "attnconv/tensor.hpp"

namespace attnconv {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Sums use a double accumulator for both dtypes.
template <class T>
double sum_of(std::span<const T> v) {
    double acc = 0.0;
    for (T x : v) acc += static_cast<double>(x);
    return acc;
}

struct ConvGeometry {
    std::int64_t n, c_in, h, w;
    std::int64_t c_out, kh, kw;
    std::int64_t stride, pad;
    std::int64_t oh, ow;

    std::int64_t cols_rows() const { return c_in * kh * kw; }
    std::int64_t out_pixels() const { return oh * ow; }
};

// cols[(c*kh + i)*kw + j][oy*ow + ox] = x[c][oy*stride + i - pad][ox*stride + j - pad]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::int64_t op = g.out_pixels();
    for (std::int64_t c = 0; c < g.c_in; ++c) {
        const T* plane = x + c * g.h * g.w;
        for (std::int64_t i = 0; i < g.kh; ++i) {
            for (std::int64_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((c * g.kh + i) * g.kw + j) * op;
                // ox range whose source column lies inside the image
                const std::int64_t lo = std::clamp<std::int64_t>((g.pad - j + g.stride - 1) / g.stride, 0, g.ow);
                const std::int64_t hi = std::clamp<std::int64_t>((g.w + g.pad - j + g.stride - 1) / g.stride, lo, g.ow);
                for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                    const std::int64_t iy = oy * g.stride + i - g.pad;
                    T* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, T(0));
                        continue;
                    }
                    const T* src = plane + iy * g.w + j - g.pad;
                    std::fill(dst, dst + lo, T(0));
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
                    }
                    std::fill(dst + hi, dst + g.ow, T(0));
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-and-adds cols back into dx.
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
    const std::int64_t op = g.out_pixels();
    for (std::int64_t c = 0; c < g.c_in; ++c) {
        T* plane = dx + c * g.h * g.w;
        for (std::int64_t i = 0; i < g.kh; ++i) {
            for (std::int64_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((c * g.kh + i) * g.kw + j) * op;
                const std::int64_t lo = std::clamp<std::int64_t>((g.pad - j + g.stride - 1) / g.stride, 0, g.ow);
                const std::int64_t hi = std::clamp<std::int64_t>((g.w + g.pad - j + g.stride - 1) / g.stride, lo, g.ow);
                for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                    const std::int64_t iy = oy * g.stride + i - g.pad;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* src = row + oy * g.ow;
                    T* dst = plane + iy * g.w + j - g.pad;
                    for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
                }
            }
        }
    }
}

template <class T>
std::vector<T>& conv_scratch(std::size_t n) {
    thread_local std::vector<T> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

// b is broadcast over trailing singleton dims of a: b.dims == a.dims[:p] + [1]*(r-p).
// Returns the contiguous block length each b element covers.
inline std::int64_t trailing_broadcast_block(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    std::size_t p = a.size();
    while (p > 0 && b[p - 1] == 1) --p;
    for (std::size_t i = 0; i < p; ++i) {
        if (a[i] != b[i]) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                             shape_str(a));
        }
    }
    std::int64_t block = 1;
    for (std::size_t i = p; i < a.size(); ++i) block *= a[i];
    return block;
}

}  // namespace detail

/// 2-D cross-correlation, no bias. input [N,C_in,H,W], weight [C_out,C_in,kH,kW].
///
/// Lowered to im2col + GEMM one sample at a time; the reduction runs over
/// (c_in, kh, kw) in ascending order. Column buffers are per-thread scratch and
/// are rebuilt in the backward pass. The weight gradient sums per-sample
/// contributions in sample order.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int pad) {
    if (input.rank() != 4 || weight.rank() != 4 || input.dim(1) != weight.dim(1)) {
        throw ShapeError("conv2d: input " + shape_str(input.dims()) + " incompatible with weight " +
                         shape_str(weight.dims()));
    }
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
    detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                           weight.dim(0), weight.dim(2), weight.dim(3),
                           stride, pad, 0, 0};
    if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
        throw ShapeError("conv2d: zero-sized spatial output for input " + shape_str(input.dims()) +
                         " and weight " + shape_str(weight.dims()) + " with pad " +
                         std::to_string(pad));
    }
    g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
    g.ow = (g.w + 2 * pad - g.kw) / stride + 1;

    const std::int64_t k = g.cols_rows();
    const std::int64_t op = g.out_pixels();
    const std::int64_t in_stride = g.c_in * g.h * g.w;
    const std::int64_t out_stride = g.c_out * op;
    // 1x1, stride 1, no padding: the input plane already is the column matrix.
    const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;

    std::vector<T> out(static_cast<std::size_t>(g.n * out_stride));
    const T* x = input.data().data();
    const T* wp = weight.data().data();
    parallel_for(g.n, [&](std::int64_t s) {
        const T* col = x + s * in_stride;
        if (!pointwise) {
            auto& scratch = detail::conv_scratch<T>(static_cast<std::size_t>(k * op));
            detail::im2col(x + s * in_stride, g, scratch.data());
            col = scratch.data();
        }
        detail::MapMat<T> y(out.data() + s * out_stride, g.c_out, op);
        y.noalias() = detail::ConstMapMat<T>(wp, g.c_out, k) * detail::ConstMapMat<T>(col, k, op);
    });

    auto in_impl = input.impl();
    auto w_impl = weight.impl();
    return Tensor<T>::make_result(
        {g.n, g.c_out, g.oh, g.ow}, std::move(out), {in_impl, w_impl},
        [g, k, op, in_stride, out_stride, pointwise, in_impl, w_impl](std::span<const T> dy) {
            const T* x = in_impl->data.data();
            if (T* dw = detail::grad_target(w_impl)) {
                detail::MapMat<T> dwm(dw, g.c_out, k);
                for (std::int64_t s = 0; s < g.n; ++s) {
                    const T* col = x + s * in_stride;
                    if (!pointwise) {
                        auto& scratch = detail::conv_scratch<T>(static_cast<std::size_t>(k * op));
                        detail::im2col(x + s * in_stride, g, scratch.data());
                        col = scratch.data();
                    }
                    dwm.noalias() += detail::ConstMapMat<T>(dy.data() + s * out_stride, g.c_out, op) *
                                     detail::ConstMapMat<T>(col, k, op).transpose();
                }
            }
            if (T* dx = detail::grad_target(in_impl)) {
                const T* wp = w_impl->data.data();
                parallel_for(g.n, [&](std::int64_t s) {
                    const auto wt = detail::ConstMapMat<T>(wp, g.c_out, k).transpose();
                    const auto dys = detail::ConstMapMat<T>(dy.data() + s * out_stride, g.c_out, op);
                    if (pointwise) {
                        detail::MapMat<T>(dx + s * in_stride, k, op).noalias() += wt * dys;
                        return;
                    }
                    auto& scratch = detail::conv_scratch<T>(static_cast<std::size_t>(k * op));
                    detail::MapMat<T>(scratch.data(), k, op).noalias() = wt * dys;
                    detail::col2im_add(scratch.data(), g, dx + s * in_stride);
                });
            }
        });
}

/// Batch normalization over (N,H,W) per channel.
///
/// Training mode normalizes with biased batch variance and blends the unbiased
/// variance into running_var; eval mode uses the running statistics.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      double momentum = 0.1, double eps = 1e-5) {
    if (input.rank() != 4) throw ShapeError("batchnorm2d: input must be NCHW, got " + shape_str(input.dims()));
    const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    for (const Tensor<T>* t : {&gamma, &beta, static_cast<const Tensor<T>*>(&running_mean),
                               static_cast<const Tensor<T>*>(&running_var)}) {
        if (t->rank() != 1 || t->dim(0) != c) {
            throw ShapeError("batchnorm2d: per-channel tensor " + shape_str(t->dims()) +
                             " does not match input " + shape_str(input.dims()));
        }
    }
    if (!(eps > 0)) throw ConfigError("batchnorm2d: eps must be positive");
    const std::int64_t count = n * hw;
    if (training && count < 2) {
        throw ShapeError("batchnorm2d: training mode needs N*H*W >= 2, got " + std::to_string(count));
    }

    const T* x = input.data().data();
    auto xhat = std::make_shared<std::vector<T>>(input.data().size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    std::vector<T> out(input.data().size());
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    const T* gm = gamma.data().data();
    const T* bt = beta.data().data();

    for (std::int64_t ch = 0; ch < c; ++ch) {
        double mean, var;
        if (training) {
            double acc = 0.0;
            for (std::int64_t s = 0; s < n; ++s) {
                const T* p = x + (s * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
            }
            mean = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::int64_t s = 0; s < n; ++s) {
                const T* p = x + (s * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(count);
            const double unbiased = sq / static_cast<double>(count - 1);
            rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * mean);
            rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] + momentum * unbiased);
        } else {
            mean = rm[ch];
            var = rv[ch];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[ch] = is;
        for (std::int64_t s = 0; s < n; ++s) {
            const std::int64_t base = (s * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                const T xh = static_cast<T>((x[base + i] - mean) * is);
                (*xhat)[base + i] = xh;
                out[base + i] = gm[ch] * xh + bt[ch];
            }
        }
    }

    auto in_impl = input.impl();
    auto g_impl = gamma.impl();
    auto b_impl = beta.impl();
    return Tensor<T>::make_result(
        input.dims(), std::move(out), {in_impl, g_impl, b_impl},
        [n, c, hw, count, training, xhat, inv_std, in_impl, g_impl, b_impl](std::span<const T> dy) {
            T* dx = detail::grad_target(in_impl);
            T* dg = detail::grad_target(g_impl);
            T* db = detail::grad_target(b_impl);
            const T* gm = g_impl->data.data();
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double sum_dy = 0.0, sum_dy_xh = 0.0;
                for (std::int64_t s = 0; s < n; ++s) {
                    const std::int64_t base = (s * c + ch) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        sum_dy += dy[base + i];
                        sum_dy_xh += static_cast<double>(dy[base + i]) * (*xhat)[base + i];
                    }
                }
                if (dg) dg[ch] += static_cast<T>(sum_dy_xh);
                if (db) db[ch] += static_cast<T>(sum_dy);
                if (!dx) continue;
                const double scale = gm[ch] * (*inv_std)[ch];
                const double mean_dy = sum_dy / static_cast<double>(count);
                const double mean_dy_xh = sum_dy_xh / static_cast<double>(count);
                for (std::int64_t s = 0; s < n; ++s) {
                    const std::int64_t base = (s * c + ch) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const double g = training
                            ? dy[base + i] - mean_dy - (*xhat)[base + i] * mean_dy_xh
                            : static_cast<double>(dy[base + i]);
                        dx[base + i] += static_cast<T>(scale * g);
                    }
                }
            }
        });
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,K], got " + shape_str(logits.dims()));
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
    }
    for (std::int64_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw DataError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                            " at index " + std::to_string(i) + " outside [0," + std::to_string(k) + ")");
        }
    }
    const T* z = logits.data().data();
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * k));
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = z + i * k;
        const double mx = *std::max_element(row, row + k);
        double se = 0.0;
        for (std::int64_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
        const double lse = mx + std::log(se);
        for (std::int64_t j = 0; j < k; ++j) (*probs)[i * k + j] = static_cast<T>(std::exp(row[j] - lse));
        total += lse - row[labels[i]];
    }
    std::vector<int> lab(labels.begin(), labels.end());
    auto z_impl = logits.impl();
    return Tensor<T>::make_result(
        {1}, {static_cast<T>(total / static_cast<double>(n))}, {z_impl},
        [n, k, probs, lab = std::move(lab), z_impl](std::span<const T> g) {
            T* dz = detail::grad_target(z_impl);
            const double scale = g[0] / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < k; ++j) {
                    const double p = (*probs)[i * k + j] - (j == lab[i] ? 1.0 : 0.0);
                    dz[i * k + j] += static_cast<T>(scale * p);
                }
            }
        });
}

/// a [N,K] x b [K,M] -> [N,M].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: " + shape_str(a.dims()) + " x " + shape_str(b.dims()));
    }
    const std::int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<T> out(static_cast<std::size_t>(n * m));
    detail::MapMat<T>(out.data(), n, m).noalias() =
        detail::ConstMapMat<T>(a.data().data(), n, k) * detail::ConstMapMat<T>(b.data().data(), k, m);
    auto ai = a.impl();
    auto bi = b.impl();
    return Tensor<T>::make_result({n, m}, std::move(out), {ai, bi}, [n, k, m, ai, bi](std::span<const T> g) {
        detail::ConstMapMat<T> gm(g.data(), n, m);
        if (T* da = detail::grad_target(ai)) {
            detail::MapMat<T>(da, n, k).noalias() += gm * detail::ConstMapMat<T>(bi->data.data(), k, m).transpose();
        }
        if (T* db = detail::grad_target(bi)) {
            detail::MapMat<T>(db, k, m).noalias() += detail::ConstMapMat<T>(ai->data.data(), n, k).transpose() * gm;
        }
    });
}

/// Fully connected layer: x [N,K], weight [M,K], bias [M] -> x·weightᵀ + bias.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) || bias.rank() != 1 ||
        bias.dim(0) != weight.dim(0)) {
        throw ShapeError("linear: input " + shape_str(x.dims()) + ", weight " + shape_str(weight.dims()) +
                         ", bias " + shape_str(bias.dims()));
    }
    const std::int64_t n = x.dim(0), k = x.dim(1), m = weight.dim(0);
    std::vector<T> out(static_cast<std::size_t>(n * m));
    detail::MapMat<T> om(out.data(), n, m);
    om.noalias() = detail::ConstMapMat<T>(x.data().data(), n, k) *
                   detail::ConstMapMat<T>(weight.data().data(), m, k).transpose();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) om(i, j) += bias[j];
    auto xi = x.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    return Tensor<T>::make_result({n, m}, std::move(out), {xi, wi, bi}, [n, k, m, xi, wi, bi](std::span<const T> g) {
        detail::ConstMapMat<T> gm(g.data(), n, m);
        if (T* dx = detail::grad_target(xi)) {
            detail::MapMat<T>(dx, n, k).noalias() += gm * detail::ConstMapMat<T>(wi->data.data(), m, k);
        }
        if (T* dw = detail::grad_target(wi)) {
            detail::MapMat<T>(dw, m, k).noalias() += gm.transpose() * detail::ConstMapMat<T>(xi->data.data(), n, k);
        }
        if (T* db = detail::grad_target(bi)) {
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < m; ++j) db[j] += gm(i, j);
        }
    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    auto xi = x.impl();
    return Tensor<T>::make_result(x.dims(), std::move(out), {xi}, [xi](std::span<const T> g) {
        T* dx = detail::grad_target(xi);
        const auto& v = xi->data;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] > T(0)) dx[i] += g[i];
    });
}

/// a + b, with b either the same shape or broadcast over trailing singleton dims.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const std::int64_t block = detail::trailing_broadcast_block(a.dims(), b.dims(), "add");
    std::vector<T> out(a.data().begin(), a.data().end());
    const T* bp = b.data().data();
    for (std::int64_t j = 0; j < b.numel(); ++j) {
        T* o = out.data() + j * block;
        for (std::int64_t i = 0; i < block; ++i) o[i] += bp[j];
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return Tensor<T>::make_result(a.dims(), std::move(out), {ai, bi}, [block, ai, bi](std::span<const T> g) {
        if (T* da = detail::grad_target(ai))
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        if (T* db = detail::grad_target(bi)) {
            const std::int64_t nb = static_cast<std::int64_t>(g.size()) / block;
            for (std::int64_t j = 0; j < nb; ++j) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < block; ++i) acc += g[j * block + i];
                db[j] += static_cast<T>(acc);
            }
        }
    });
}

template <class T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= s;
    auto ai = a.impl();
    return Tensor<T>::make_result(a.dims(), std::move(out), {ai}, [s, ai](std::span<const T> g) {
        T* da = detail::grad_target(ai);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += s * g[i];
    });
}

/// Elementwise a ⊙ b with b broadcast over trailing singleton dims of a
/// (e.g. weight [O,I,kh,kw] ⊙ scale [O,I,1,1] or [O,1,1,1]).
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const std::int64_t block = detail::trailing_broadcast_block(a.dims(), b.dims(), "mul");
    std::vector<T> out(a.data().begin(), a.data().end());
    const T* bp = b.data().data();
    for (std::int64_t j = 0; j < b.numel(); ++j) {
        T* o = out.data() + j * block;
        for (std::int64_t i = 0; i < block; ++i) o[i] *= bp[j];
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return Tensor<T>::make_result(a.dims(), std::move(out), {ai, bi}, [block, ai, bi](std::span<const T> g) {
        const auto& av = ai->data;
        const auto& bv = bi->data;
        if (T* da = detail::grad_target(ai)) {
            for (std::size_t j = 0; j < bv.size(); ++j)
                for (std::int64_t i = 0; i < block; ++i) da[j * block + i] += g[j * block + i] * bv[j];
        }
        if (T* db = detail::grad_target(bi)) {
            const std::int64_t nb = static_cast<std::int64_t>(g.size()) / block;
            for (std::int64_t j = 0; j < nb; ++j) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < block; ++i) acc += static_cast<double>(g[j * block + i]) * av[j * block + i];
                db[j] += static_cast<T>(acc);
            }
        }
    });
}

/// Max pooling with implicit -inf padding; ties resolve to the first window position.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride, int pad = 0) {
    if (x.rank() != 4) throw ShapeError("maxpool2d: input must be NCHW, got " + shape_str(x.dims()));
    if (kernel < 1 || stride < 1 || pad < 0 || 2 * pad > kernel) {
        throw ShapeError("maxpool2d: invalid kernel/stride/pad");
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h + 2 * pad < kernel || w + 2 * pad < kernel) {
        throw ShapeError("maxpool2d: zero-sized output for input " + shape_str(x.dims()));
    }
    const std::int64_t oh = (h + 2 * pad - kernel) / stride + 1;
    const std::int64_t ow = (w + 2 * pad - kernel) / stride + 1;
    std::vector<T> out(static_cast<std::size_t>(n * c * oh * ow));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const T* xp = x.data().data();
    for (std::int64_t p = 0; p < n * c; ++p) {
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::int64_t where = -1;
                for (std::int64_t i = 0; i < kernel; ++i) {
                    const std::int64_t iy = oy * stride + i - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t j = 0; j < kernel; ++j) {
                        const std::int64_t ix = ox * stride + j - pad;
                        if (ix < 0 || ix >= w) continue;
                        const std::int64_t idx = (p * h + iy) * w + ix;
                        if (where < 0 || xp[idx] > best) {
                            best = xp[idx];
                            where = idx;
                        }
                    }
                }
                const std::int64_t o = (p * oh + oy) * ow + ox;
                out[o] = best;
                (*argmax)[o] = where;
            }
        }
    }
    auto xi = x.impl();
    return Tensor<T>::make_result({n, c, oh, ow}, std::move(out), {xi}, [argmax, xi](std::span<const T> g) {
        T* dx = detail::grad_target(xi);
        for (std::size_t o = 0; o < g.size(); ++o) dx[(*argmax)[o]] += g[o];
    });
}

/// [N,C,H,W] -> [N,C] spatial mean.
template <class T>
Tensor<T> global_avgpool(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("global_avgpool: input must be NCHW, got " + shape_str(x.dims()));
    const std::int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(static_cast<std::size_t>(nc));
    const T* xp = x.data().data();
    for (std::int64_t p = 0; p < nc; ++p) {
        out[p] = static_cast<T>(detail::sum_of(std::span<const T>(xp + p * hw, hw)) / static_cast<double>(hw));
    }
    auto xi = x.impl();
    return Tensor<T>::make_result({x.dim(0), x.dim(1)}, std::move(out), {xi}, [nc, hw, xi](std::span<const T> g) {
        T* dx = detail::grad_target(xi);
        for (std::int64_t p = 0; p < nc; ++p) {
            const T v = static_cast<T>(g[p] / static_cast<double>(hw));
            for (std::int64_t i = 0; i < hw; ++i) dx[p * hw + i] += v;
        }
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape dims) {
    if (shape_numel(dims) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.dims()) + " -> " + shape_str(dims));
    }
    auto xi = x.impl();
    return Tensor<T>::make_result(std::move(dims), x.values(), {xi}, [xi](std::span<const T> g) {
        T* dx = detail::grad_target(xi);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

/// Sum of all elements -> [1].
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    auto xi = x.impl();
    return Tensor<T>::make_result({1}, {static_cast<T>(detail::sum_of(x.data()))}, {xi}, [xi](std::span<const T> g) {
        T* dx = detail::grad_target(xi);
        for (std::size_t i = 0; i < xi->data.size(); ++i) dx[i] += g[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scalar_mul(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

/// Mean of one channel of an NCHW tensor over N, H, W -> [1].
template <class T>
Tensor<T> channel_mean(const Tensor<T>& x, std::int64_t channel) {
    if (x.rank() != 4 || channel < 0 || channel >= x.dim(1)) {
        throw ShapeError("channel_mean: channel " + std::to_string(channel) + " not in " + shape_str(x.dims()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    double acc = 0.0;
    const T* xp = x.data().data();
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < hw; ++i) acc += xp[(s * c + channel) * hw + i];
    const double count = static_cast<double>(n * hw);
    auto xi = x.impl();
    return Tensor<T>::make_result({1}, {static_cast<T>(acc / count)}, {xi},
                                  [n, c, hw, channel, count, xi](std::span<const T> g) {
        T* dx = detail::grad_target(xi);
        const T v = static_cast<T>(g[0] / count);
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t i = 0; i < hw; ++i) dx[(s * c + channel) * hw + i] += v;
    });
}

}  // namespace attnconv
