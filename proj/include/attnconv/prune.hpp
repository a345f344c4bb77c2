#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "attnconv/checkpoint.hpp"
#include "attnconv/model.hpp"

namespace attnconv {

struct ChannelRank {
    std::string layer;
    std::int64_t channel = 0;
    /// OutOnly: the attention value. InTimesOut: ℓ1 of the channel's attention row.
    double attention_score = 0;
    /// ℓ1 norm of the channel's (unscaled) kernel.
    double weight_l1 = 0;
    /// 1-based position in the descending ranking.
    std::int64_t rank = 0;
};

/// Per output channel attention scores of one layer.
template <class T>
std::vector<double> channel_scores(const ConvLayer<T>& conv) {
    if (!conv.has_attention()) throw ConfigError("layer " + conv.name + " has no attention");
    const std::int64_t rows = conv.out_channels();
    const std::int64_t len = conv.attn.numel() / rows;
    const auto a = conv.attn.data();
    std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
    for (std::int64_t j = 0; j < rows; ++j)
        for (std::int64_t i = 0; i < len; ++i) out[static_cast<std::size_t>(j)] += std::abs(static_cast<double>(a[j * len + i]));
    return out;
}

/// Every (layer, output channel) in descending attention score; ties keep
/// layer order, then channel order.
template <class T>
std::vector<ChannelRank> rank_channels(const Model<T>& model) {
    if (!model.has_attention()) throw ConfigError("rank_channels: no attention attached");
    std::vector<ChannelRank> out;
    for (const auto* conv : model.conv_layers()) {
        const auto scores = channel_scores(*conv);
        const std::int64_t per = conv->weight.numel() / conv->out_channels();
        const auto w = conv->weight.data();
        for (std::int64_t c = 0; c < conv->out_channels(); ++c) {
            double l1 = 0;
            for (std::int64_t i = 0; i < per; ++i) l1 += std::abs(static_cast<double>(w[c * per + i]));
            out.push_back({conv->name, c, scores[static_cast<std::size_t>(c)], l1, 0});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ChannelRank& a, const ChannelRank& b) { return a.attention_score > b.attention_score; });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<std::int64_t>(i + 1);
    return out;
}

inline void write_rank_csv(const std::filesystem::path& path, std::span<const ChannelRank> ranks) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "layer,channel,attention_score,weight_l1,rank\n";
    char line[64];
    for (const auto& r : ranks) {
        std::snprintf(line, sizeof line, ",%lld,%.9g,", static_cast<long long>(r.channel), r.attention_score);
        out << r.layer << line;
        std::snprintf(line, sizeof line, "%.9g,%lld\n", r.weight_l1, static_cast<long long>(r.rank));
        out << line;
    }
}

/// Bakes attention into the kernels. The folded weight is the same product the
/// attended forward computes, so logits match exactly.
template <class T>
Model<T> fold_attention(const Model<T>& model) {
    if (!model.has_attention()) throw ConfigError("fold_attention: no attention attached");
    Model<T> out = model.clone();
    NoGradGuard no_grad;
    for (auto* conv : out.conv_layers()) {
        Tensor<T> folded = conv->effective_weight().clone();
        conv->weight = std::move(folded);
        conv->attn = Tensor<T>{};
    }
    for (auto& p : out.parameters()) p.tensor.set_requires_grad(false);
    return out;
}

struct KeepFraction {
    double rho = 0.7;
};
struct Threshold {
    double tau = 0.0;
};
using PrunePolicy = std::variant<KeepFraction, Threshold>;

/// Output channels of one layer that survive the policy, ascending.
inline std::vector<std::int64_t> kept_channels(std::span<const double> scores, const PrunePolicy& policy,
                                               const std::string& layer) {
    std::vector<std::int64_t> keep;
    if (const auto* kf = std::get_if<KeepFraction>(&policy)) {
        if (!(kf->rho > 0.0 && kf->rho <= 1.0)) throw ConfigError("keep fraction must be in (0, 1]");
        const auto n = static_cast<std::int64_t>(scores.size());
        // Small epsilon so that e.g. 0.7·10 keeps 7, not 8.
        const auto k = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(kf->rho * n - 1e-9)), 1, n);
        std::vector<std::int64_t> order(scores.size());
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        });
        keep.assign(order.begin(), order.begin() + k);
        std::sort(keep.begin(), keep.end());
    } else {
        const double tau = std::get<Threshold>(policy).tau;
        if (!(tau >= 0.0)) throw ConfigError("threshold must be >= 0");
        for (std::size_t c = 0; c < scores.size(); ++c)
            if (!(scores[c] < tau)) keep.push_back(static_cast<std::int64_t>(c));
    }
    if (keep.empty()) throw ConfigError("pruning policy would remove every channel of layer " + layer);
    return keep;
}

namespace detail {

template <class T>
Tensor<T> select_rows(const Tensor<T>& t, std::span<const std::int64_t> rows) {
    const std::int64_t per = t.numel() / t.dim(0);
    Shape dims = t.dims();
    dims[0] = static_cast<std::int64_t>(rows.size());
    std::vector<T> v;
    v.reserve(static_cast<std::size_t>(per) * rows.size());
    const auto src = t.data();
    for (auto r : rows) v.insert(v.end(), src.begin() + r * per, src.begin() + (r + 1) * per);
    return Tensor<T>(std::move(dims), std::move(v));
}

// Keeps the given slices along dim 1 of a [C_out, C_in, ...] tensor.
template <class T>
Tensor<T> select_inputs(const Tensor<T>& t, std::span<const std::int64_t> cols) {
    const std::int64_t cout = t.dim(0), cin = t.dim(1);
    const std::int64_t inner = t.numel() / (cout * cin);
    Shape dims = t.dims();
    dims[1] = static_cast<std::int64_t>(cols.size());
    std::vector<T> v;
    v.reserve(static_cast<std::size_t>(cout * inner) * cols.size());
    const auto src = t.data();
    for (std::int64_t o = 0; o < cout; ++o)
        for (auto c : cols) {
            const auto at = src.begin() + (o * cin + c) * inner;
            v.insert(v.end(), at, at + inner);
        }
    return Tensor<T>(std::move(dims), std::move(v));
}

}  // namespace detail

/// Structurally removes output channels of `producer` (and of its batch-norm,
/// if given) together with the matching input slices of `consumer`.
template <class T>
void prune_channel_pair(ConvLayer<T>& producer, BatchNorm<T>* bn, ConvLayer<T>& consumer,
                        std::span<const std::int64_t> keep) {
    if (producer.has_attention() || consumer.has_attention()) {
        throw ConfigError("prune_channel_pair expects folded (attention-free) layers");
    }
    if (consumer.in_channels() != producer.out_channels()) {
        throw ShapeError("prune_channel_pair: " + producer.name + " outputs " +
                         std::to_string(producer.out_channels()) + " channels but " + consumer.name + " takes " +
                         std::to_string(consumer.in_channels()));
    }
    producer.weight = detail::select_rows(producer.weight, keep);
    if (bn) {
        bn->gamma = detail::select_rows(bn->gamma, keep);
        bn->beta = detail::select_rows(bn->beta, keep);
        bn->running_mean = detail::select_rows(bn->running_mean, keep);
        bn->running_var = detail::select_rows(bn->running_var, keep);
    }
    consumer.weight = detail::select_inputs(consumer.weight, keep);
}

/// Zeroes the kernels of every output channel not in `keep`.
template <class T>
void mask_channels(ConvLayer<T>& conv, std::span<const std::int64_t> keep) {
    const std::int64_t per = conv.weight.numel() / conv.out_channels();
    auto w = conv.weight.mutable_data();
    std::size_t k = 0;
    for (std::int64_t c = 0; c < conv.out_channels(); ++c) {
        if (k < keep.size() && keep[k] == c) {
            ++k;
            continue;
        }
        std::fill(w.begin() + c * per, w.begin() + (c + 1) * per, T(0));
    }
}

/// Folds attention, then drops low-scoring channels. Inside a residual block
/// every conv but the last is pruned structurally; the last path conv, the
/// projection shortcuts and the stem feed a residual sum and are masked instead.
template <class T>
Model<T> prune(const Model<T>& model, const PrunePolicy& policy) {
    if (!model.has_attention()) throw ConfigError("prune: no attention attached");
    // Decide every layer's keep set first so a failing policy leaves nothing half-done.
    std::vector<std::vector<std::int64_t>> keeps;
    for (const auto* conv : model.conv_layers()) keeps.push_back(kept_channels(channel_scores(*conv), policy, conv->name));

    Model<T> out = fold_attention(model);
    std::size_t li = 0;
    mask_channels(out.stem.conv, keeps[li++]);
    for (auto& stage : out.stages) {
        for (auto& block : stage) {
            for (std::size_t i = 0; i < block.path.size(); ++i) {
                const auto& keep = keeps[li++];
                if (i + 1 < block.path.size()) {
                    prune_channel_pair(block.path[i].conv, &block.path[i].bn, block.path[i + 1].conv,
                                       std::span<const std::int64_t>(keep));
                } else {
                    mask_channels(block.path[i].conv, keep);
                }
            }
            if (block.shortcut) mask_channels(block.shortcut->conv, keeps[li++]);
        }
    }
    return out;
}

/// Parameter count that also excludes masked channels: conv output rows whose
/// kernel is entirely zero. num_parameters() counts only structural removals.
template <class T>
std::int64_t live_parameters(const Model<T>& model) {
    std::int64_t n = model.num_parameters();
    for (const auto* conv : model.conv_layers()) {
        const std::int64_t per = conv->weight.numel() / conv->out_channels();
        const auto w = conv->weight.data();
        for (std::int64_t c = 0; c < conv->out_channels(); ++c)
            if (std::all_of(w.begin() + c * per, w.begin() + (c + 1) * per, [](T v) { return v == T(0); })) n -= per;
    }
    return n;
}

/// Reshapes a model's conv and batch-norm tensors to the shapes stored in a
/// checkpoint, so that pruned checkpoints can be loaded into a freshly built model.
template <class T>
void adopt_checkpoint_shapes(Model<T>& model, const std::vector<RawTensor>& tensors) {
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    auto resized = [&](Tensor<T>& t, const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end() || it->second->dims == t.dims()) return;
        t = Tensor<T>::zeros(it->second->dims);
    };
    model.for_each_conv_bn([&](ConvBn<T>& cb) {
        resized(cb.conv.weight, cb.conv.name + ".weight");
        resized(cb.bn.gamma, cb.bn.name + ".weight");
        resized(cb.bn.beta, cb.bn.name + ".bias");
        resized(cb.bn.running_mean, cb.bn.name + ".running_mean");
        resized(cb.bn.running_var, cb.bn.name + ".running_var");
    });
}

}  // namespace attnconv
