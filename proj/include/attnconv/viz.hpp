#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "attnconv/data.hpp"
#include "attnconv/model.hpp"

namespace attnconv {

struct VizConfig {
    std::string layer;
    std::int64_t channel = 0;
    int steps = 200;
    double step_size = 1.0;
    double blur_sigma = 1.0;
    int blur_every = 4;
    std::uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw ConfigError("viz: steps must be >= 1");
        if (!(blur_sigma >= 0)) throw ConfigError("viz: blur sigma must be >= 0");
        if (blur_every < 1) throw ConfigError("viz: blur interval must be >= 1");
        if (!std::isfinite(step_size)) throw ConfigError("viz: step size must be finite");
    }
};

struct VizResult {
    /// Optimized input in normalized space, [C, S, S].
    Tensor<float> image;
    /// objective[i] is the channel mean before step i; the last entry is the final value.
    std::vector<double> objective;
    /// blurred[i] is true when a blur followed step i.
    std::vector<bool> blurred;

    std::vector<std::uint8_t> pixels(const NormalizationSpec& spec = imagenet_normalization()) const {
        return denormalize(image.data(), static_cast<int>(image.dim(0)), spec);
    }
};

/// Normalized 1-D Gaussian taps, radius ceil(3σ).
inline std::vector<double> gaussian_kernel(double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    return k;
}

/// Separable Gaussian blur of each plane of a [..., H, W] buffer, edges clamped.
template <class T>
void gaussian_blur(std::span<T> data, std::int64_t planes, std::int64_t h, std::int64_t w, double sigma) {
    if (sigma <= 0) return;
    const auto k = gaussian_kernel(sigma);
    const auto r = static_cast<std::int64_t>(k.size() / 2);
    std::vector<double> tmp(static_cast<std::size_t>(h * w));
    for (std::int64_t p = 0; p < planes; ++p) {
        T* img = data.data() + p * h * w;
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                double s = 0;
                for (std::int64_t d = -r; d <= r; ++d)
                    s += k[static_cast<std::size_t>(d + r)] * img[y * w + std::clamp<std::int64_t>(x + d, 0, w - 1)];
                tmp[static_cast<std::size_t>(y * w + x)] = s;
            }
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                double s = 0;
                for (std::int64_t d = -r; d <= r; ++d)
                    s += k[static_cast<std::size_t>(d + r)] *
                         tmp[static_cast<std::size_t>(std::clamp<std::int64_t>(y + d, 0, h - 1) * w + x)];
                img[y * w + x] = static_cast<T>(s);
            }
    }
}

namespace detail {

template <class T>
ConvLayer<T>& viz_target(Model<T>& model, const std::string& layer, std::int64_t channel) {
    auto* conv = model.find_conv(layer);
    if (conv == nullptr) throw ConfigError("unknown conv layer '" + layer + "'");
    if (channel < 0 || channel >= conv->out_channels()) {
        throw ConfigError("channel " + std::to_string(channel) + " out of range for " + layer + " (" +
                          std::to_string(conv->out_channels()) + " channels)");
    }
    return *conv;
}

}  // namespace detail

/// Gradient ascent on the input image to raise the mean of one channel of a
/// conv output, with a periodic Gaussian blur.
template <class T>
VizResult activation_maximize(const Model<T>& model, const VizConfig& cfg) {
    cfg.validate();
    Model<T> m = model.clone();
    detail::viz_target(m, cfg.layer, cfg.channel);
    for (auto& p : m.parameters()) p.tensor.set_requires_grad(false);
    m.bn_training = false;

    const std::int64_t c = m.config.in_channels, s = m.config.input_size;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> noise(0.4, 0.6);
    std::vector<T> x(static_cast<std::size_t>(c * s * s));
    for (auto& v : x) v = static_cast<T>(noise(rng));

    VizResult res;
    auto objective_at = [&](bool with_grad) {
        Tensor<T> input({1, c, s, s}, x, with_grad);
        auto obj = channel_mean(m.conv_output(input, cfg.layer), cfg.channel);
        const double v = obj.item();
        if (with_grad) backward(obj);
        return std::pair{v, input};
    };
    for (int step = 0; step < cfg.steps; ++step) {
        auto [value, input] = objective_at(true);
        if (!std::isfinite(value)) {
            throw DivergenceError("activation maximization: non-finite objective at step " + std::to_string(step));
        }
        res.objective.push_back(value);
        const auto g = input.grad();
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(x[i] + cfg.step_size * g[i]);
        const bool blur = cfg.blur_sigma > 0 && (step + 1) % cfg.blur_every == 0;
        if (blur) gaussian_blur(std::span<T>(x), c, s, s, cfg.blur_sigma);
        res.blurred.push_back(blur);
    }
    {
        NoGradGuard no_grad;
        const double final_value = objective_at(false).first;
        if (!std::isfinite(final_value)) {
            throw DivergenceError("activation maximization: non-finite objective at step " + std::to_string(cfg.steps));
        }
        res.objective.push_back(final_value);
    }
    std::vector<float> img(x.begin(), x.end());
    res.image = Tensor<float>({c, s, s}, std::move(img));
    return res;
}

struct ImageScore {
    std::size_t index = 0;
    double score = 0;
};

/// Feature-map ℓ1 norm of one channel for every image of a split.
template <class T>
std::vector<double> channel_l1_scores(Model<T>& model, const std::string& layer, std::int64_t channel,
                                      const NormalizedSet& set, int batch = 128) {
    detail::viz_target(model, layer, channel);
    NoGradGuard no_grad;
    const bool was_training = model.bn_training;
    model.bn_training = false;
    std::vector<double> scores;
    scores.reserve(set.count());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < set.count(); start += static_cast<std::size_t>(batch)) {
        idx.clear();
        for (std::size_t i = start; i < std::min(set.count(), start + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
        auto [x, y] = set.batch(idx);
        const auto out = model.conv_output(x, layer);
        const std::int64_t ch = out.dim(1), hw = out.dim(2) * out.dim(3);
        const auto d = out.data();
        for (std::size_t n = 0; n < idx.size(); ++n) {
            double s = 0;
            const std::size_t base = (n * static_cast<std::size_t>(ch) + static_cast<std::size_t>(channel)) * hw;
            for (std::int64_t i = 0; i < hw; ++i) s += std::abs(static_cast<double>(d[base + i]));
            scores.push_back(s);
        }
    }
    model.bn_training = was_training;
    return scores;
}

/// The k images with the largest feature-map ℓ1 norm, descending; ties by lower index.
template <class T>
std::vector<ImageScore> top_activating_images(Model<T>& model, const std::string& layer, std::int64_t channel,
                                              const NormalizedSet& set, std::size_t k) {
    if (k < 1 || k > set.count()) {
        throw ConfigError("top-k: k = " + std::to_string(k) + " must be in [1, " + std::to_string(set.count()) + "]");
    }
    const auto scores = channel_l1_scores(model, layer, channel, set);
    std::vector<ImageScore> all(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) all[i] = {i, scores[i]};
    std::stable_sort(all.begin(), all.end(), [](const ImageScore& a, const ImageScore& b) { return a.score > b.score; });
    all.resize(k);
    return all;
}

/// Binary PPM (P6) from a channel-major 3×H×W u8 buffer.
inline void write_ppm(const std::filesystem::path& path, std::span<const std::uint8_t> chw, int height, int width) {
    if (chw.size() != static_cast<std::size_t>(3) * height * width) {
        throw ShapeError("write_ppm: expected 3x" + std::to_string(height) + "x" + std::to_string(width) + " pixels");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P6\n" << width << ' ' << height << "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    std::vector<char> rgb(3 * plane);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) rgb[3 * i + c] = static_cast<char>(chw[c * plane + i]);
    out.write(rgb.data(), static_cast<std::streamsize>(rgb.size()));
}

inline void write_trace_csv(const std::filesystem::path& path, const VizResult& r) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "step,objective,blurred\n";
    char line[64];
    for (std::size_t i = 0; i < r.objective.size(); ++i) {
        const bool b = i < r.blurred.size() && r.blurred[i];
        std::snprintf(line, sizeof line, "%zu,%.9g,%d\n", i, r.objective[i], b ? 1 : 0);
        out << line;
    }
}

}  // namespace attnconv
