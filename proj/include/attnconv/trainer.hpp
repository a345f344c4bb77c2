#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnconv/attention.hpp"
#include "attnconv/data.hpp"
#include "attnconv/model.hpp"

namespace attnconv {

/// One letter per epoch from {F, A, B, E}.
struct TrainingScheme {
    std::vector<GroupLetter> epochs;

    bool contains(GroupLetter g) const { return std::find(epochs.begin(), epochs.end(), g) != epochs.end(); }
    std::string str() const {
        std::string s;
        for (auto g : epochs) s.push_back(static_cast<char>(g));
        return s;
    }
};

/// Parses strings like "FFAAABAAABAA". Error positions are 1-based.
inline TrainingScheme parse_scheme(std::string_view s) {
    if (s.empty()) throw ConfigError("training scheme is empty");
    TrainingScheme out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c != 'F' && c != 'A' && c != 'B' && c != 'E') {
            throw ConfigError("training scheme '" + std::string(s) + "': invalid letter '" + std::string(1, c) +
                              "' at position " + std::to_string(i + 1) + " (expected F, A, B or E)");
        }
        out.epochs.push_back(static_cast<GroupLetter>(c));
    }
    return out;
}

struct OptimizerConfig {
    std::map<GroupLetter, double> learning_rate{
        {GroupLetter::F, 1e-2}, {GroupLetter::A, 1e-2}, {GroupLetter::B, 1e-3}, {GroupLetter::E, 1e-3}};
    double momentum = 0.9;

    double lr(GroupLetter g) const { return learning_rate.at(g); }
};

/// SGD with heavy-ball momentum: v ← μ·v + g; p ← p − lr·v.
/// Velocity buffers are keyed by parameter identity and dropped on reset().
template <class T>
class SgdMomentum {
public:
    explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

    void step(std::span<ParamRef<T>> params, double lr) {
        for (auto& p : params) {
            if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
            auto& v = velocity_[p.tensor.impl().get()];
            auto g = p.tensor.grad();
            if (v.size() != g.size()) v.assign(g.size(), T(0));
            auto data = p.tensor.mutable_data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                v[i] = static_cast<T>(momentum_ * v[i] + g[i]);
                data[i] = static_cast<T>(data[i] - lr * v[i]);
            }
        }
    }

    void reset() { velocity_.clear(); }

private:
    double momentum_;
    std::map<const void*, std::vector<T>> velocity_;
};

struct EpochReport {
    int epoch = 0;  // 1-based
    char letter = 'F';
    double loss = 0;
    double penalty = 0;
    double top1 = 0;
    double top3 = 0;
    double seconds = 0;
};

struct EvalResult {
    double top1 = 0;
    double top3 = 0;
};

struct TrainConfig {
    RegularizerConfig reg;
    OptimizerConfig opt;
    int batch_size = 32;
    int eval_batch = 128;
    /// Inverse-class-frequency sampling with replacement; otherwise a shuffled pass.
    bool weighted_sampling = true;
    std::uint64_t seed = 0;
    /// Diagnostic: backpropagate only the attention penalty in A epochs.
    bool penalty_only = false;
    std::function<void(const EpochReport&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochReport> reports;
    Model<float> best;
    int best_epoch = 0;
    double best_top1 = -1.0;
};

/// Whether label's logit is among the k largest, ties resolved toward lower class index.
inline bool topk_hit(std::span<const float> row, int label, int k) {
    const int kk = std::min<int>(k, static_cast<int>(row.size()));
    int rank = 0;
    const float z = row[static_cast<std::size_t>(label)];
    for (int j = 0; j < static_cast<int>(row.size()); ++j) {
        if (row[static_cast<std::size_t>(j)] > z || (row[static_cast<std::size_t>(j)] == z && j < label)) ++rank;
    }
    return rank < kk;
}

struct TopkHits {
    std::int64_t top1 = 0;
    std::int64_t top3 = 0;
};

inline TopkHits topk_hits(const Tensor<float>& logits, std::span<const int> labels) {
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    TopkHits h;
    for (std::int64_t i = 0; i < n; ++i) {
        auto row = logits.data().subspan(static_cast<std::size_t>(i * k), static_cast<std::size_t>(k));
        h.top1 += topk_hit(row, labels[static_cast<std::size_t>(i)], 1);
        h.top3 += topk_hit(row, labels[static_cast<std::size_t>(i)], 3);
    }
    return h;
}

inline EvalResult topk_accuracy(const Tensor<float>& logits, std::span<const int> labels) {
    const auto h = topk_hits(logits, labels);
    const double n = static_cast<double>(logits.dim(0));
    return {static_cast<double>(h.top1) / n, static_cast<double>(h.top3) / n};
}

/// Eval-mode forward over the whole split (running batch-norm statistics, no graph).
inline EvalResult evaluate(Model<float>& model, const NormalizedSet& split, int batch = 128) {
    if (split.count() == 0) throw DataError("evaluate: empty split");
    NoGradGuard no_grad;
    const bool was_training = model.bn_training;
    model.bn_training = false;
    TopkHits total;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < split.count(); start += static_cast<std::size_t>(batch)) {
        idx.clear();
        for (std::size_t i = start; i < std::min(split.count(), start + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
        auto [x, y] = split.batch(idx);
        const auto h = topk_hits(model.forward(x), y);
        total.top1 += h.top1;
        total.top3 += h.top3;
    }
    model.bn_training = was_training;
    const double n = static_cast<double>(split.count());
    return {static_cast<double>(total.top1) / n, static_cast<double>(total.top3) / n};
}

/// Order in which training records are visited during one epoch.
template <class Rng>
std::vector<std::size_t> epoch_order(const NormalizedSet& train, bool weighted, Rng& rng) {
    if (weighted) {
        std::vector<int> counts(static_cast<std::size_t>(train.num_classes), 0);
        for (int l : train.labels) ++counts[static_cast<std::size_t>(l)];
        WeightedSampler sampler(sampler_weights(counts, train.labels));
        return sampler.draw(train.count(), rng);
    }
    std::vector<std::size_t> order(train.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

struct StepResult {
    double loss = 0;
};

/// One optimizer step on one batch for the currently trainable group.
/// The attention penalty enters the loss only when `letter` is A.
inline StepResult train_step(Model<float>& model, const Tensor<float>& x, std::span<const int> labels,
                             GroupLetter letter, const TrainConfig& cfg, SgdMomentum<float>& opt) {
    model.zero_grad();
    auto logits = model.forward(x);
    auto xent = softmax_cross_entropy(logits, labels);
    const auto layers = attention_layers(model);
    const bool penalize = letter == GroupLetter::A && cfg.reg.kind != RegularizerKind::None && !layers.empty();
    Tensor<float> loss = penalize ? total_loss<float>(xent, layers, cfg.reg) : xent;
    const double value = loss.item();
    if (!std::isfinite(value)) throw DivergenceError("non-finite loss");
    if (cfg.penalty_only && penalize && cfg.reg.lambda > 0) {
        backward(scalar_mul(attention_penalty<float>(layers, cfg.reg), static_cast<float>(cfg.reg.lambda)));
    } else if (loss.tracked()) {
        backward(loss);
    }
    auto params = model.parameters();
    opt.step(params, cfg.opt.lr(letter));
    for (auto* c : model.conv_layers()) c->clamp_attention();
    return {value};
}

inline double penalty_value(const Model<float>& model, const RegularizerConfig& reg) {
    if (reg.kind == RegularizerKind::None || !model.has_attention()) return 0.0;
    NoGradGuard no_grad;
    return attention_penalty<float>(attention_layers(model), reg).item();
}

/// Runs the scheme epoch by epoch and keeps the model with the best val top-1.
inline TrainResult train(Model<float>& model, const TrainingScheme& scheme, const NormalizedSet& train_set,
                         const NormalizedSet& val_set, const TrainConfig& cfg) {
    if (train_set.count() == 0 || val_set.count() == 0) throw DataError("train: empty train or val split");
    if (scheme.contains(GroupLetter::A) && !model.has_attention()) {
        throw ConfigError("scheme contains A but no attention is attached");
    }
    if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    SgdMomentum<float> opt(cfg.opt.momentum);
    TrainResult result;
    std::optional<GroupLetter> prev;
    for (std::size_t e = 0; e < scheme.epochs.size(); ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        const GroupLetter letter = scheme.epochs[e];
        set_trainable(model, letter);
        if (prev != letter) opt.reset();
        prev = letter;

        const auto order = epoch_order(train_set, cfg.weighted_sampling, rng);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::span<const std::size_t> idx(order.data() + start, end - start);
            auto [x, y] = train_set.batch(idx);
            try {
                loss_sum += train_step(model, x, y, letter, cfg, opt).loss;
            } catch (const DivergenceError&) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(e + 1) + ", batch " +
                                      std::to_string(batches));
            }
            ++batches;
        }
        EpochReport rep;
        rep.epoch = static_cast<int>(e + 1);
        rep.letter = static_cast<char>(letter);
        rep.loss = loss_sum / static_cast<double>(batches);
        rep.penalty = penalty_value(model, cfg.reg);
        const auto ev = evaluate(model, val_set, cfg.eval_batch);
        rep.top1 = ev.top1;
        rep.top3 = ev.top3;
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.reports.push_back(rep);
        if (rep.top1 > result.best_top1) {
            result.best_top1 = rep.top1;
            result.best_epoch = rep.epoch;
            result.best = model.clone();
        }
        if (cfg.on_epoch) cfg.on_epoch(rep);
    }
    for (auto& p : model.parameters()) p.tensor.zero_grad();
    return result;
}

inline void write_epoch_csv(const std::filesystem::path& path, std::span<const EpochReport> reports) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,letter,loss,penalty,top1,top3,seconds\n";
    char line[256];
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%d,%c,%.9g,%.9g,%.6f,%.6f,%.3f\n", r.epoch, r.letter, r.loss, r.penalty,
                      r.top1, r.top3, r.seconds);
        out << line;
    }
}

}  // namespace attnconv
