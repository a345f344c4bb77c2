#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnconv/ops.hpp"
#include "attnconv/tensor.hpp"

namespace attnconv {

/// Granularity of the attention attached to a convolution.
/// OutOnly: one scalar per output channel, dims [C_out,1,1,1].
/// InTimesOut: one scalar per (output, input) channel pair, dims [C_out,C_in,1,1].
enum class AttentionShape { OutOnly, InTimesOut };

inline std::string_view to_string(AttentionShape s) {
    return s == AttentionShape::OutOnly ? "out" : "inout";
}

/// Bias-free convolution whose (frozen) kernel can be scaled by trainable attention.
template <class T>
struct ConvLayer {
    std::string name;
    Tensor<T> weight;  // [C_out, C_in, kH, kW]
    Tensor<T> attn;    // undefined until attention is attached
    AttentionShape attn_shape = AttentionShape::InTimesOut;
    int stride = 1;
    int pad = 0;
    double clamp_max = 2.0;

    std::int64_t out_channels() const { return weight.dim(0); }
    std::int64_t in_channels() const { return weight.dim(1); }
    bool has_attention() const { return attn.defined(); }

    Shape attention_dims(AttentionShape s) const {
        return s == AttentionShape::OutOnly ? Shape{out_channels(), 1, 1, 1}
                                            : Shape{out_channels(), in_channels(), 1, 1};
    }

    /// Attaches all-ones attention and freezes the kernel.
    void attach(AttentionShape s, double clamp) {
        if (has_attention()) throw ConfigError("attention already attached to " + name);
        if (!(clamp > 0)) throw ConfigError("attention clamp_max must be positive");
        attn_shape = s;
        clamp_max = clamp;
        attn = Tensor<T>::ones(attention_dims(s));
        attn.set_requires_grad(true);
        weight.set_requires_grad(false);
    }

    /// Kernel actually convolved: weight ⊙ broadcast(attn).
    Tensor<T> effective_weight() const {
        if (!has_attention()) return weight;
        check_attention();
        return mul(weight, attn);
    }

    Tensor<T> forward(const Tensor<T>& input) const { return conv2d(input, effective_weight(), stride, pad); }

    void clamp_attention() {
        if (!has_attention()) return;
        for (auto& v : attn.mutable_data()) v = std::clamp(v, T(0), static_cast<T>(clamp_max));
    }

    void check_attention() const {
        if (attn.dims() != attention_dims(attn_shape)) {
            throw ShapeError("attention of " + name + " has shape " + shape_str(attn.dims()) +
                             ", expected " + shape_str(attention_dims(attn_shape)) + " for kernel " +
                             shape_str(weight.dims()));
        }
    }

    ConvLayer clone() const {
        ConvLayer c = *this;
        c.weight = weight.clone();
        if (has_attention()) c.attn = attn.clone();
        return c;
    }
};

template <class T>
Tensor<T> attn_conv_forward(const ConvLayer<T>& layer, const Tensor<T>& input) {
    return layer.forward(input);
}

enum class RegularizerKind { None, L1, L2, DivergeL2 };

struct RegularizerConfig {
    RegularizerKind kind = RegularizerKind::DivergeL2;
    double lambda = 1e-3;
};

inline std::string_view to_string(RegularizerKind k) {
    switch (k) {
        case RegularizerKind::L1: return "l1";
        case RegularizerKind::L2: return "l2";
        case RegularizerKind::DivergeL2: return "diverge";
        case RegularizerKind::None: break;
    }
    return "none";
}

inline RegularizerKind parse_regularizer(std::string_view s) {
    if (s == "l1") return RegularizerKind::L1;
    if (s == "l2") return RegularizerKind::L2;
    if (s == "diverge") return RegularizerKind::DivergeL2;
    if (s == "none") return RegularizerKind::None;
    throw ConfigError("unknown regularizer '" + std::string(s) + "' (expected l1, l2, diverge, none)");
}

/// Σ over filters j of ℓ(a_j) for one attention tensor, where a_j is row j.
///   L1        ‖a_j‖₁
///   L2        ‖a_j‖₂
///   DivergeL2 −‖a_j − 1‖₁²
/// Subgradients at the kinks are 0.
template <class T>
Tensor<T> filter_penalty(const Tensor<T>& attn, RegularizerKind kind) {
    if (kind == RegularizerKind::None) throw ConfigError("filter_penalty: kind must not be None");
    const std::int64_t rows = attn.dim(0);
    const std::int64_t len = attn.numel() / rows;
    const T* a = attn.data().data();
    auto row_stat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    double total = 0.0;
    for (std::int64_t j = 0; j < rows; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < len; ++i) {
            const double v = a[j * len + i];
            switch (kind) {
                case RegularizerKind::L1: s += std::abs(v); break;
                case RegularizerKind::L2: s += v * v; break;
                default: s += std::abs(v - 1.0); break;
            }
        }
        if (kind == RegularizerKind::L2) s = std::sqrt(s);
        (*row_stat)[j] = s;
        total += kind == RegularizerKind::DivergeL2 ? -s * s : s;
    }
    auto ai = attn.impl();
    return Tensor<T>::make_result({1}, {static_cast<T>(total)}, {ai},
                                  [kind, rows, len, row_stat, ai](std::span<const T> g) {
        T* da = detail::grad_target(ai);
        const auto& av = ai->data;
        const auto sign = [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); };
        for (std::int64_t j = 0; j < rows; ++j) {
            const double s = (*row_stat)[j];
            for (std::int64_t i = 0; i < len; ++i) {
                const double v = av[j * len + i];
                double d = 0.0;
                switch (kind) {
                    case RegularizerKind::L1: d = sign(v); break;
                    case RegularizerKind::L2: d = s > 0 ? v / s : 0.0; break;
                    default: d = -2.0 * s * sign(v - 1.0); break;
                }
                da[j * len + i] += static_cast<T>(g[0] * d);
            }
        }
    });
}

/// Attention penalty summed over every filter of every layer.
template <class T>
Tensor<T> attention_penalty(std::span<const ConvLayer<T>* const> layers, const RegularizerConfig& cfg) {
    if (cfg.kind == RegularizerKind::None) throw ConfigError("attention_penalty: regularizer kind is None");
    if (layers.empty()) throw ConfigError("attention_penalty: no attention layers");
    Tensor<T> total;
    for (const auto* layer : layers) {
        if (!layer->has_attention()) throw ConfigError("attention_penalty: " + layer->name + " has no attention");
        auto p = filter_penalty(layer->attn, cfg.kind);
        total = total.defined() ? add(total, p) : p;
    }
    return total;
}

/// xent + λ·penalty; returns xent itself when the regularizer is off.
template <class T>
Tensor<T> total_loss(const Tensor<T>& xent, std::span<const ConvLayer<T>* const> layers,
                     const RegularizerConfig& cfg) {
    if (cfg.kind == RegularizerKind::None || cfg.lambda == 0.0) return xent;
    if (cfg.lambda < 0) throw ConfigError("regularizer lambda must be non-negative");
    return add(xent, scalar_mul(attention_penalty(layers, cfg), static_cast<T>(cfg.lambda)));
}

}  // namespace attnconv
