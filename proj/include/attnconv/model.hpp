#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "attnconv/attention.hpp"
#include "attnconv/ops.hpp"
#include "attnconv/tensor.hpp"

namespace attnconv {

/// Residual CNN layout. Defaults describe the 32px toy network with basic blocks.
struct ModelConfig {
    int input_size = 32;
    int in_channels = 3;
    std::vector<int> stage_channels{16, 32, 64};
    std::vector<int> blocks_per_stage{1, 1, 1};
    int num_classes = 10;

    int stem_kernel = 3;
    int stem_stride = 1;
    bool stem_maxpool = false;
    /// Bottleneck blocks (1x1, 3x3, 1x1 with 4x expansion) instead of basic blocks.
    bool bottleneck = false;

    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    int expansion() const { return bottleneck ? 4 : 1; }
    int feature_channels() const { return stage_channels.back() * expansion(); }

    void validate() const {
        if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size()) {
            throw ConfigError("model config: stage_channels and blocks_per_stage must be non-empty and equal length");
        }
        for (std::size_t i = 0; i < stage_channels.size(); ++i) {
            if (stage_channels[i] < 1 || blocks_per_stage[i] < 1) {
                throw ConfigError("model config: stage " + std::to_string(i) + " has a non-positive entry");
            }
        }
        if (input_size < 1 || in_channels < 1 || num_classes < 1 || stem_kernel < 1 || stem_stride < 1) {
            throw ConfigError("model config: sizes must be >= 1");
        }
        int size = (input_size + 2 * (stem_kernel / 2) - stem_kernel) / stem_stride + 1;
        if (input_size + 2 * (stem_kernel / 2) < stem_kernel || size < 1) {
            throw ConfigError("model config: input_size " + std::to_string(input_size) + " too small for the stem");
        }
        if (stem_maxpool) {
            if (size < 2) throw ConfigError("model config: input_size too small for the stem max-pool");
            size = (size + 2 - 3) / 2 + 1;
        }
        for (std::size_t s = 1; s < stage_channels.size(); ++s) {
            if (size < 2) {
                throw ConfigError("model config: input_size " + std::to_string(input_size) +
                                  " too small for the downsampling at stage " + std::to_string(s + 1) +
                                  " (spatial size " + std::to_string(size) + ")");
            }
            size = (size + 2 - 3) / 2 + 1;
        }
    }
};

/// The 32px desk-scale network: stages [16,32,64], one basic block each.
inline ModelConfig toy_config(int num_classes, int input_size = 32) {
    ModelConfig cfg;
    cfg.num_classes = num_classes;
    cfg.input_size = input_size;
    return cfg;
}

/// ResNet-50 layout (7x7/2 stem, max-pool, bottleneck stages 3-4-6-3).
inline ModelConfig resnet50_config(int num_classes = 1000, int input_size = 224) {
    ModelConfig cfg;
    cfg.input_size = input_size;
    cfg.stage_channels = {64, 128, 256, 512};
    cfg.blocks_per_stage = {3, 4, 6, 3};
    cfg.num_classes = num_classes;
    cfg.stem_kernel = 7;
    cfg.stem_stride = 2;
    cfg.stem_maxpool = true;
    cfg.bottleneck = true;
    return cfg;
}

/// Parameter groups used by training schemes.
///   F  classifier weight and bias
///   A  attention tensors
///   B  batch-norm gamma and beta
///   E  everything except attention (conv kernels, F and B)
enum class GroupLetter : char { F = 'F', A = 'A', B = 'B', E = 'E' };

/// Exclusive role of a parameter; E is the union of the non-attention roles.
enum class ParamRole { Classifier, Attention, BatchNorm, ConvWeight };

inline bool in_group(ParamRole role, GroupLetter g) {
    switch (g) {
        case GroupLetter::F: return role == ParamRole::Classifier;
        case GroupLetter::A: return role == ParamRole::Attention;
        case GroupLetter::B: return role == ParamRole::BatchNorm;
        case GroupLetter::E: return role != ParamRole::Attention;
    }
    return false;
}

template <class T>
struct BatchNorm {
    std::string name;
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNorm(std::string n = {}, std::int64_t channels = 1, double mom = 0.1, double e = 1e-5)
        : name(std::move(n)),
          gamma(Tensor<T>::ones({channels})),
          beta(Tensor<T>::zeros({channels})),
          running_mean(Tensor<T>::zeros({channels})),
          running_var(Tensor<T>::ones({channels})),
          momentum(mom),
          eps(e) {}

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
    }

    BatchNorm clone() const {
        BatchNorm b = *this;
        b.gamma = gamma.clone();
        b.beta = beta.clone();
        b.running_mean = running_mean.clone();
        b.running_var = running_var.clone();
        return b;
    }
};

template <class T>
struct ConvBn {
    ConvLayer<T> conv;
    BatchNorm<T> bn;

    ConvBn clone() const { return {conv.clone(), bn.clone()}; }
};

/// Residual block: path convs (each followed by BN, ReLU between them), an
/// optional projection shortcut, sum, then ReLU.
template <class T>
struct ResidualBlock {
    std::vector<ConvBn<T>> path;
    std::optional<ConvBn<T>> shortcut;

    ResidualBlock clone() const {
        ResidualBlock b;
        for (const auto& p : path) b.path.push_back(p.clone());
        if (shortcut) b.shortcut = shortcut->clone();
        return b;
    }
};

template <class T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;  // shallow handle
    ParamRole role;
};

template <class T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <class T>
class Model {
public:
    ModelConfig config;
    ConvBn<T> stem;
    std::vector<std::vector<ResidualBlock<T>>> stages;
    Tensor<T> fc_weight;  // [num_classes, features]
    Tensor<T> fc_bias;    // [num_classes]
    /// Batch-norm layers use batch statistics (and update running stats) when true.
    bool bn_training = false;

    Tensor<T> forward(const Tensor<T>& x) { return run(x, nullptr); }

    /// Output of the named conv layer (after attention, before batch-norm).
    Tensor<T> conv_output(const Tensor<T>& x, std::string_view layer) {
        Capture cap{std::string(layer), {}};
        run(x, &cap);
        if (!cap.value.defined()) throw ConfigError("unknown conv layer '" + std::string(layer) + "'");
        return cap.value;
    }

    /// Penultimate features [N, feature_channels].
    Tensor<T> features(const Tensor<T>& x) {
        Capture cap{"", {}};
        cap.want_features = true;
        run(x, &cap);
        return cap.value;
    }

    std::vector<ConvLayer<T>*> conv_layers() {
        std::vector<ConvLayer<T>*> out;
        for_each_conv_bn([&](ConvBn<T>& cb) { out.push_back(&cb.conv); });
        return out;
    }
    std::vector<const ConvLayer<T>*> conv_layers() const {
        std::vector<const ConvLayer<T>*> out;
        const_cast<Model*>(this)->for_each_conv_bn([&](ConvBn<T>& cb) { out.push_back(&cb.conv); });
        return out;
    }
    std::vector<BatchNorm<T>*> batchnorms() {
        std::vector<BatchNorm<T>*> out;
        for_each_conv_bn([&](ConvBn<T>& cb) { out.push_back(&cb.bn); });
        return out;
    }

    ConvLayer<T>* find_conv(std::string_view name) {
        for (auto* c : conv_layers())
            if (c->name == name) return c;
        return nullptr;
    }

    bool has_attention() const {
        const auto convs = conv_layers();
        return !convs.empty() && convs.front()->has_attention();
    }

    /// Trainable parameters with their roles, in forward order; classifier last.
    std::vector<ParamRef<T>> parameters() const {
        std::vector<ParamRef<T>> out;
        const_cast<Model*>(this)->for_each_conv_bn([&](ConvBn<T>& cb) {
            out.push_back({cb.conv.name + ".weight", cb.conv.weight, ParamRole::ConvWeight});
            if (cb.conv.has_attention()) out.push_back({cb.conv.name + ".attn", cb.conv.attn, ParamRole::Attention});
            out.push_back({cb.bn.name + ".weight", cb.bn.gamma, ParamRole::BatchNorm});
            out.push_back({cb.bn.name + ".bias", cb.bn.beta, ParamRole::BatchNorm});
        });
        out.push_back({"fc.weight", fc_weight, ParamRole::Classifier});
        out.push_back({"fc.bias", fc_bias, ParamRole::Classifier});
        return out;
    }

    /// Every persisted tensor (parameters and batch-norm running statistics).
    std::vector<NamedTensor<T>> state() const {
        std::vector<NamedTensor<T>> out;
        const_cast<Model*>(this)->for_each_conv_bn([&](ConvBn<T>& cb) {
            out.push_back({cb.conv.name + ".weight", cb.conv.weight});
            if (cb.conv.has_attention()) out.push_back({cb.conv.name + ".attn", cb.conv.attn});
            out.push_back({cb.bn.name + ".weight", cb.bn.gamma});
            out.push_back({cb.bn.name + ".bias", cb.bn.beta});
            out.push_back({cb.bn.name + ".running_mean", cb.bn.running_mean});
            out.push_back({cb.bn.name + ".running_var", cb.bn.running_var});
        });
        out.push_back({"fc.weight", fc_weight});
        out.push_back({"fc.bias", fc_bias});
        return out;
    }

    std::int64_t num_parameters() const {
        std::int64_t n = 0;
        for (const auto& p : parameters()) n += p.tensor.numel();
        return n;
    }

    std::int64_t num_trainable() const {
        std::int64_t n = 0;
        for (const auto& p : parameters())
            if (p.tensor.requires_grad()) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }

    /// Independent deep copy.
    Model clone() const {
        Model m;
        m.config = config;
        m.stem = stem.clone();
        for (const auto& st : stages) {
            auto& dst = m.stages.emplace_back();
            for (const auto& b : st) dst.push_back(b.clone());
        }
        m.fc_weight = fc_weight.clone();
        m.fc_bias = fc_bias.clone();
        m.bn_training = bn_training;
        return m;
    }

    template <class Fn>
    void for_each_conv_bn(Fn&& fn) {
        fn(stem);
        for (auto& st : stages) {
            for (auto& b : st) {
                for (auto& p : b.path) fn(p);
                if (b.shortcut) fn(*b.shortcut);
            }
        }
    }

private:
    struct Capture {
        std::string layer;
        Tensor<T> value;
        bool want_features = false;
        bool done() const { return value.defined(); }
    };

    Tensor<T> conv_bn(ConvBn<T>& cb, const Tensor<T>& x, Capture* cap) {
        auto y = cb.conv.forward(x);
        if (cap && !cap->want_features && cb.conv.name == cap->layer) {
            cap->value = y;
            return y;
        }
        return cb.bn.forward(y, bn_training);
    }

    Tensor<T> run(const Tensor<T>& x, Capture* cap) {
        auto h = relu(conv_bn(stem, x, cap));
        if (cap && cap->done()) return {};
        if (config.stem_maxpool) h = maxpool2d(h, 3, 2, 1);
        for (auto& st : stages) {
            for (auto& b : st) {
                auto y = h;
                for (std::size_t i = 0; i < b.path.size(); ++i) {
                    y = conv_bn(b.path[i], y, cap);
                    if (cap && cap->done()) return {};
                    if (i + 1 < b.path.size()) y = relu(y);
                }
                auto skip = h;
                if (b.shortcut) {
                    skip = conv_bn(*b.shortcut, h, cap);
                    if (cap && cap->done()) return {};
                }
                h = relu(add(y, skip));
            }
        }
        auto pooled = global_avgpool(h);
        if (cap && cap->want_features) {
            cap->value = pooled;
            return {};
        }
        return linear(pooled, fc_weight, fc_bias);
    }
};

namespace detail {

template <class T>
Tensor<T> he_normal(Shape dims, std::mt19937_64& rng) {
    // fan_out = C_out * kH * kW
    const double fan_out = static_cast<double>(dims[0] * dims[2] * dims[3]);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
    std::vector<T> v(static_cast<std::size_t>(shape_numel(dims)));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(dims), std::move(v));
}

}  // namespace detail

/// Replaces the classifier with a freshly initialized one for `num_classes` outputs.
template <class T>
void reset_classifier(Model<T>& model, int num_classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const std::int64_t feat = model.config.feature_channels();
    const double bound = 1.0 / std::sqrt(static_cast<double>(feat));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> w(static_cast<std::size_t>(num_classes * feat)), b(static_cast<std::size_t>(num_classes));
    for (auto& x : w) x = static_cast<T>(dist(rng));
    for (auto& x : b) x = static_cast<T>(dist(rng));
    const bool w_rg = model.fc_weight.defined() && model.fc_weight.requires_grad();
    model.fc_weight = Tensor<T>({num_classes, feat}, std::move(w), w_rg);
    model.fc_bias = Tensor<T>({num_classes}, std::move(b), w_rg);
    model.config.num_classes = num_classes;
}

/// Deterministic He-initialized residual network. Every parameter starts frozen.
template <class T = float>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    Model<T> m;
    m.config = cfg;

    auto make = [&](std::string conv_name, std::string bn_name, std::int64_t in, std::int64_t out, int k,
                    int stride) {
        ConvBn<T> cb{ConvLayer<T>{}, BatchNorm<T>(std::move(bn_name), out, cfg.bn_momentum, cfg.bn_eps)};
        cb.conv.name = std::move(conv_name);
        cb.conv.weight = detail::he_normal<T>({out, in, k, k}, rng);
        cb.conv.stride = stride;
        cb.conv.pad = k / 2;
        return cb;
    };

    m.stem = make("conv1", "bn1", cfg.in_channels, cfg.stage_channels[0], cfg.stem_kernel, cfg.stem_stride);
    std::int64_t in = cfg.stage_channels[0];
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        auto& stage = m.stages.emplace_back();
        const std::int64_t width = cfg.stage_channels[s];
        const std::int64_t out = width * cfg.expansion();
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            const std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
            ResidualBlock<T> block;
            if (cfg.bottleneck) {
                block.path.push_back(make(prefix + "conv1", prefix + "bn1", in, width, 1, 1));
                block.path.push_back(make(prefix + "conv2", prefix + "bn2", width, width, 3, stride));
                block.path.push_back(make(prefix + "conv3", prefix + "bn3", width, out, 1, 1));
            } else {
                block.path.push_back(make(prefix + "conv1", prefix + "bn1", in, out, 3, stride));
                block.path.push_back(make(prefix + "conv2", prefix + "bn2", out, out, 3, 1));
            }
            if (stride != 1 || in != out) {
                block.shortcut = make(prefix + "downsample.0", prefix + "downsample.1", in, out, 1, stride);
            }
            stage.push_back(std::move(block));
            in = out;
        }
    }
    reset_classifier(m, cfg.num_classes, seed);
    return m;
}

inline GroupLetter parse_group_letter(char c) {
    switch (c) {
        case 'F': return GroupLetter::F;
        case 'A': return GroupLetter::A;
        case 'B': return GroupLetter::B;
        case 'E': return GroupLetter::E;
        default: throw ConfigError(std::string("unknown group letter '") + c + "'");
    }
}

/// Makes exactly the given group trainable. Batch-norm runs on batch statistics
/// in B and E epochs; F and A epochs keep it on running statistics.
template <class T>
void set_trainable(Model<T>& model, GroupLetter letter) {
    if (letter == GroupLetter::A && !model.has_attention()) {
        throw ConfigError("cannot train group A: no attention attached");
    }
    for (auto& p : model.parameters()) p.tensor.set_requires_grad(in_group(p.role, letter));
    model.bn_training = letter == GroupLetter::B || letter == GroupLetter::E;
}

/// Attaches all-ones attention to every conv layer. Outputs are unchanged.
template <class T>
void attach_attention(Model<T>& model, AttentionShape shape, double clamp_max = 2.0) {
    if (model.has_attention()) throw ConfigError("attention is already attached");
    auto convs = model.conv_layers();
    if (convs.empty()) throw ConfigError("model has no conv layers");
    for (auto* c : convs) c->attach(shape, clamp_max);
}

template <class T>
std::vector<const ConvLayer<T>*> attention_layers(const Model<T>& model) {
    std::vector<const ConvLayer<T>*> out;
    for (const auto* c : model.conv_layers())
        if (c->has_attention()) out.push_back(c);
    return out;
}

}  // namespace attnconv
