#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnconv/checkpoint.hpp"
#include "attnconv/error.hpp"
#include "attnconv/tensor.hpp"

namespace attnconv {

/// Packed u8 images (channel-major records) with integer labels.
struct LabeledDataset {
    int channels = 3;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<std::uint8_t> pixels;
    std::vector<int> labels;
    std::vector<int> class_counts;

    std::size_t size() const { return labels.size(); }
    std::size_t record_bytes() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    std::span<const std::uint8_t> image(std::size_t i) const {
        return std::span<const std::uint8_t>(pixels).subspan(i * record_bytes(), record_bytes());
    }

    /// Recomputes class_counts from labels; throws on out-of-range labels.
    void recount() {
        class_counts.assign(static_cast<std::size_t>(num_classes), 0);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw DataError("label " + std::to_string(labels[i]) + " at record " + std::to_string(i) +
                                " outside [0," + std::to_string(num_classes) + ")");
            }
            ++class_counts[static_cast<std::size_t>(labels[i])];
        }
    }

    LabeledDataset subset(std::span<const std::size_t> indices) const {
        LabeledDataset out;
        out.channels = channels;
        out.height = height;
        out.width = width;
        out.num_classes = num_classes;
        out.pixels.reserve(indices.size() * record_bytes());
        for (auto i : indices) {
            auto img = image(i);
            out.pixels.insert(out.pixels.end(), img.begin(), img.end());
            out.labels.push_back(labels[i]);
        }
        out.recount();
        return out;
    }

    /// Same pixels, different label track.
    LabeledDataset relabeled(std::vector<int> new_labels, int classes) const {
        LabeledDataset out = *this;
        out.labels = std::move(new_labels);
        out.num_classes = classes;
        out.recount();
        return out;
    }
};

// ---------------------------------------------------------------------------
// IDB1: "IDB1" | u32 count | u32 C | u32 H | u32 W | u32 num_classes |
//       per record: u32 label, C*H*W u8 pixels. Little-endian.

inline constexpr std::size_t kIdb1HeaderBytes = 24;

inline std::vector<std::uint8_t> encode_idb1(const LabeledDataset& ds) {
    detail::ByteWriter w;
    w.bytes("IDB1", 4);
    w.le(static_cast<std::uint32_t>(ds.size()));
    w.le(static_cast<std::uint32_t>(ds.channels));
    w.le(static_cast<std::uint32_t>(ds.height));
    w.le(static_cast<std::uint32_t>(ds.width));
    w.le(static_cast<std::uint32_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        w.le(static_cast<std::uint32_t>(ds.labels[i]));
        auto img = ds.image(i);
        w.bytes(img.data(), img.size());
    }
    return std::move(w.buffer());
}

inline LabeledDataset decode_idb1(const std::vector<std::uint8_t>& buf, const std::string& what = "IDB1") {
    if (buf.size() < 4 || std::memcmp(buf.data(), "IDB1", 4) != 0) {
        throw DataError(what + ": bad magic (expected \"IDB1\")");
    }
    if (buf.size() < kIdb1HeaderBytes) throw DataError(what + ": truncated header");
    detail::ByteReader r(buf, buf.size(), what);
    r.str(4, "magic");
    LabeledDataset ds;
    const auto count = r.le<std::uint32_t>("count");
    const auto c = r.le<std::uint32_t>("C");
    const auto h = r.le<std::uint32_t>("H");
    const auto w = r.le<std::uint32_t>("W");
    const auto k = r.le<std::uint32_t>("num_classes");
    if (c == 0 || h == 0 || w == 0) throw DataError(what + ": zero image dimension");
    if (c > 0xFFFF || h > 0xFFFF || w > 0xFFFF || k > 0x7FFFFFFF) {
        throw DataError(what + ": implausible header (C=" + std::to_string(c) + ", H=" + std::to_string(h) +
                        ", W=" + std::to_string(w) + ", classes=" + std::to_string(k) + ")");
    }
    const std::uint64_t rec = std::uint64_t{c} * h * w;
    const std::uint64_t expected = kIdb1HeaderBytes + std::uint64_t{count} * (4 + rec);
    if (expected != buf.size()) {
        throw DataError(what + ": size mismatch, header implies " + std::to_string(expected) + " bytes but file has " +
                        std::to_string(buf.size()));
    }
    ds.channels = static_cast<int>(c);
    ds.height = static_cast<int>(h);
    ds.width = static_cast<int>(w);
    ds.num_classes = static_cast<int>(k);
    ds.labels.reserve(count);
    ds.pixels.resize(count * rec);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto label = r.le<std::uint32_t>("label");
        if (label >= k) {
            throw DataError(what + ": label " + std::to_string(label) + " at record " + std::to_string(i) +
                            " outside [0," + std::to_string(k) + ")");
        }
        ds.labels.push_back(static_cast<int>(label));
        const std::size_t off = kIdb1HeaderBytes + i * (4 + rec) + 4;
        r.need(rec, "pixels");
        std::memcpy(ds.pixels.data() + i * rec, buf.data() + off, rec);
        r.skip(rec);
    }
    ds.recount();
    return ds;
}

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
    detail::write_file(path, encode_idb1(ds));
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
    return decode_idb1(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Normalization and resizing

struct NormalizationSpec {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

inline NormalizationSpec imagenet_normalization() { return {}; }

/// Bilinear resize (half-pixel centers, edge clamp) of one channel-major u8
/// image to target×target without cropping, then scaling to [0,1] and per-channel
/// (x − mean)/std.
inline Tensor<float> normalize_resize(std::span<const std::uint8_t> image, int channels, int height, int width,
                                      int target, const NormalizationSpec& spec = {}) {
    if (channels != 3) throw ShapeError("normalize_resize: expected 3 channels, got " + std::to_string(channels));
    if (static_cast<std::size_t>(channels) * height * width != image.size() || target < 1) {
        throw ShapeError("normalize_resize: image buffer does not match " + std::to_string(channels) + "x" +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    std::vector<float> out(static_cast<std::size_t>(channels) * target * target);
    const double sy = static_cast<double>(height) / target;
    const double sx = static_cast<double>(width) / target;
    for (int c = 0; c < channels; ++c) {
        const std::uint8_t* plane = image.data() + static_cast<std::size_t>(c) * height * width;
        for (int y = 0; y < target; ++y) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(height - 1));
            const int y0 = static_cast<int>(std::floor(fy));
            const int y1 = std::min(y0 + 1, height - 1);
            const double wy = fy - y0;
            for (int x = 0; x < target; ++x) {
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(width - 1));
                const int x0 = static_cast<int>(std::floor(fx));
                const int x1 = std::min(x0 + 1, width - 1);
                const double wx = fx - x0;
                const double top = plane[y0 * width + x0] * (1 - wx) + plane[y0 * width + x1] * wx;
                const double bot = plane[y1 * width + x0] * (1 - wx) + plane[y1 * width + x1] * wx;
                const double v = (top * (1 - wy) + bot * wy) / 255.0;
                out[(static_cast<std::size_t>(c) * target + y) * target + x] =
                    static_cast<float>((v - spec.mean[c]) / spec.std[c]);
            }
        }
    }
    return Tensor<float>({channels, target, target}, std::move(out));
}

/// Inverse of the normalization, rounded and clamped to u8.
inline std::vector<std::uint8_t> denormalize(std::span<const float> chw, int channels,
                                             const NormalizationSpec& spec = {}) {
    std::vector<std::uint8_t> out(chw.size());
    const std::size_t plane = chw.size() / static_cast<std::size_t>(channels);
    for (std::size_t i = 0; i < chw.size(); ++i) {
        const int c = static_cast<int>(i / plane);
        const double v = (chw[i] * spec.std[c] + spec.mean[c]) * 255.0;
        out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    return out;
}

/// Dataset normalized once into a float cache, served as NCHW batches.
struct NormalizedSet {
    int channels = 3;
    int size = 0;
    int num_classes = 0;
    std::vector<float> data;
    std::vector<int> labels;

    std::size_t count() const { return labels.size(); }
    std::size_t image_floats() const { return static_cast<std::size_t>(channels) * size * size; }

    std::pair<Tensor<float>, std::vector<int>> batch(std::span<const std::size_t> indices) const {
        std::vector<float> x;
        x.reserve(indices.size() * image_floats());
        std::vector<int> y;
        for (auto i : indices) {
            const float* p = data.data() + i * image_floats();
            x.insert(x.end(), p, p + image_floats());
            y.push_back(labels[i]);
        }
        return {Tensor<float>({static_cast<std::int64_t>(indices.size()), channels, size, size}, std::move(x)),
                std::move(y)};
    }
};

inline NormalizedSet normalize_dataset(const LabeledDataset& ds, int target, const NormalizationSpec& spec = {}) {
    NormalizedSet out;
    out.channels = ds.channels;
    out.size = target;
    out.num_classes = ds.num_classes;
    out.labels = ds.labels;
    out.data.reserve(ds.size() * out.image_floats());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto t = normalize_resize(ds.image(i), ds.channels, ds.height, ds.width, target, spec);
        out.data.insert(out.data.end(), t.data().begin(), t.data().end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting and sampling

struct SplitSpec {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;

    void validate() const {
        if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
            throw ConfigError("split fractions must be non-negative and sum to 1");
        }
    }
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Stratified split: each class contributes floor(m·val) to val, floor(m·test)
/// to test, the remainder to train. Index lists come back sorted.
inline SplitIndices split_indices(const LabeledDataset& ds, const SplitSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::string small;
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        if (by_class[k].size() < 3) {
            small += (small.empty() ? "" : ", ") + std::to_string(k) + " (" + std::to_string(by_class[k].size()) + ")";
        }
    }
    if (!small.empty()) throw DataError("cannot stratify: classes with fewer than 3 members: " + small);

    std::mt19937_64 rng(seed);
    SplitIndices out;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const double m = static_cast<double>(members.size());
        const auto n_val = static_cast<std::size_t>(std::floor(m * spec.val + 1e-9));
        const auto n_test = static_cast<std::size_t>(std::floor(m * spec.test + 1e-9));
        out.val.insert(out.val.end(), members.begin(), members.begin() + n_val);
        out.test.insert(out.test.end(), members.begin() + n_val, members.begin() + n_val + n_test);
        out.train.insert(out.train.end(), members.begin() + n_val + n_test, members.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

struct DatasetSplits {
    LabeledDataset train, val, test;
};

inline DatasetSplits split(const LabeledDataset& ds, const SplitSpec& spec, std::uint64_t seed) {
    const auto idx = split_indices(ds, spec, seed);
    return {ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

/// Per-sample weights 1/class_counts[label], normalized to sum to 1, so every
/// class is drawn with equal total probability.
inline std::vector<double> sampler_weights(std::span<const int> class_counts, std::span<const int> labels) {
    for (std::size_t k = 0; k < class_counts.size(); ++k) {
        if (class_counts[k] < 1) throw DataError("weighted sampler: class " + std::to_string(k) + " has no training samples");
    }
    std::vector<double> w(labels.size());
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        w[i] = 1.0 / class_counts[static_cast<std::size_t>(labels[i])];
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

/// Draws indices with replacement according to fixed weights.
class WeightedSampler {
public:
    explicit WeightedSampler(std::vector<double> weights) : dist_(weights.begin(), weights.end()) {}

    template <class Rng>
    std::vector<std::size_t> draw(std::size_t n, Rng& rng) {
        std::vector<std::size_t> out(n);
        for (auto& i : out) i = dist_(rng);
        return out;
    }

private:
    std::discrete_distribution<std::size_t> dist_;
};

// ---------------------------------------------------------------------------
// Synthetic fine-grained data

struct SynthOptions {
    int num_coarse = 4;
    int fine_per_coarse = 5;
    int per_class = 100;
    int size = 32;
    std::uint64_t seed = 0;
    /// Optional per-fine-class record counts (length num_coarse·fine_per_coarse); overrides per_class.
    std::vector<int> class_sizes;
};

/// Per-class record counts drawn uniformly from [lo, hi], for class-imbalanced variants.
inline std::vector<int> imbalanced_class_sizes(int classes, int lo, int hi, std::uint64_t seed) {
    if (classes < 1 || lo < 1 || hi < lo) throw ConfigError("imbalanced sizes need classes >= 1 and 1 <= lo <= hi");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(lo, hi);
    std::vector<int> out(static_cast<std::size_t>(classes));
    for (auto& c : out) c = u(rng);
    return out;
}

/// One set of pixels with two label tracks. Fine label = coarse·fine_per_coarse + f.
struct FineGrainedData {
    LabeledDataset coarse;
    LabeledDataset fine;
};

namespace detail {

inline std::array<double, 3> hue_to_rgb(double h) {
    // Fully saturated hue in [0,1).
    const double r = std::clamp(std::abs(h * 6.0 - 3.0) - 1.0, 0.0, 1.0);
    const double g = std::clamp(2.0 - std::abs(h * 6.0 - 2.0), 0.0, 1.0);
    const double b = std::clamp(2.0 - std::abs(h * 6.0 - 4.0), 0.0, 1.0);
    return {r, g, b};
}

}  // namespace detail

/// Textured-disc images. A coarse class fixes the hue family and the stripe
/// orientation; fine classes inside it differ only in stripe period, drawn with
/// a random phase so no fixed pixel pattern identifies them. Positions, radius,
/// color, contrast and noise vary per record.
inline FineGrainedData synth_fine_grained(const SynthOptions& opt) {
    if (opt.num_coarse < 1 || opt.fine_per_coarse < 1 || opt.per_class < 1) {
        throw ConfigError("synth: num_coarse, fine_per_coarse and per_class must all be >= 1");
    }
    if (opt.size < 16) throw ConfigError("synth: size " + std::to_string(opt.size) + " < 16 cannot resolve textures");
    const int fine_classes = opt.num_coarse * opt.fine_per_coarse;
    if (!opt.class_sizes.empty() && static_cast<int>(opt.class_sizes.size()) != fine_classes) {
        throw ConfigError("synth: class_sizes must have one entry per fine class");
    }
    const int s = opt.size;
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Periods (in units of the 32px grid) spaced geometrically between 2.5 and 8.
    std::vector<double> periods(static_cast<std::size_t>(opt.fine_per_coarse));
    for (int f = 0; f < opt.fine_per_coarse; ++f) {
        const double t = opt.fine_per_coarse == 1 ? 0.5 : static_cast<double>(f) / (opt.fine_per_coarse - 1);
        periods[static_cast<std::size_t>(f)] = 2.5 * std::pow(8.0 / 2.5, t) * (s / 32.0);
    }

    LabeledDataset fine;
    fine.channels = 3;
    fine.height = s;
    fine.width = s;
    fine.num_classes = fine_classes;
    std::vector<int> coarse_labels;
    const std::size_t rec = fine.record_bytes();

    for (int cls = 0; cls < fine_classes; ++cls) {
        const int coarse = cls / opt.fine_per_coarse;
        const int f = cls % opt.fine_per_coarse;
        const int count = opt.class_sizes.empty() ? opt.per_class : opt.class_sizes[static_cast<std::size_t>(cls)];
        const double base_hue = static_cast<double>(coarse) / opt.num_coarse;
        const double base_theta = std::numbers::pi * coarse / opt.num_coarse;
        for (int n = 0; n < count; ++n) {
            const auto rgb = detail::hue_to_rgb(std::fmod(base_hue + 0.04 * gauss(rng) + 1.0, 1.0));
            const double theta = base_theta + 0.12 * gauss(rng);
            const double period = periods[static_cast<std::size_t>(f)] * (1.0 + 0.04 * gauss(rng));
            const double phase = 2.0 * std::numbers::pi * u01(rng);
            const double contrast = 0.35 + 0.25 * u01(rng);
            const double brightness = 0.45 + 0.2 * u01(rng);
            const double radius = s * (0.28 + 0.12 * u01(rng));
            const double cx = s * (0.35 + 0.3 * u01(rng));
            const double cy = s * (0.35 + 0.3 * u01(rng));
            const double bg = 0.3 + 0.4 * u01(rng);
            const double ct = std::cos(theta), st = std::sin(theta);
            const std::size_t base = fine.pixels.size();
            fine.pixels.resize(base + rec);
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                    const double r = std::sqrt(dx * dx + dy * dy);
                    // soft disc edge
                    const double inside = std::clamp(radius - r + 0.5, 0.0, 1.0);
                    const double stripe = std::sin(2.0 * std::numbers::pi * (dx * ct + dy * st) / period + phase);
                    const double lum = brightness * (1.0 + contrast * stripe);
                    for (int c = 0; c < 3; ++c) {
                        const double fg = lum * (0.35 + 0.65 * rgb[static_cast<std::size_t>(c)]);
                        const double v = inside * fg + (1.0 - inside) * bg + 0.05 * gauss(rng);
                        fine.pixels[base + (static_cast<std::size_t>(c) * s + y) * s + x] =
                            static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
                    }
                }
            }
            fine.labels.push_back(cls);
            coarse_labels.push_back(coarse);
        }
    }
    fine.recount();
    FineGrainedData out;
    out.coarse = fine.relabeled(std::move(coarse_labels), opt.num_coarse);
    out.fine = std::move(fine);
    return out;
}

inline FineGrainedData synth_fine_grained(int num_coarse, int fine_per_coarse, int per_class, int size,
                                          std::uint64_t seed) {
    SynthOptions opt;
    opt.num_coarse = num_coarse;
    opt.fine_per_coarse = fine_per_coarse;
    opt.per_class = per_class;
    opt.size = size;
    opt.seed = seed;
    return synth_fine_grained(opt);
}

}  // namespace attnconv
