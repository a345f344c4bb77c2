// Acceptance gate: one PASS/FAIL line per primary criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"

using namespace attnconv;

namespace {

// Desk-scale experiment settings shared by criteria 3-7.
constexpr int kImageSize = 32;
constexpr int kPretrainEpochs = 4;
constexpr double kPretrainLr = 0.05;
constexpr double kLrF = 0.5;
constexpr double kLrA = 0.3;
constexpr int kSeeds = 3;
const char* const kAttentionScheme = "FFAAABAAABAA";
const char* const kFcScheme = "FFFFFFFFFFFF";

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct TaskData {
    NormalizedSet train, val;
};

TaskData task_data(const LabeledDataset& ds) {
    const auto parts = split(ds, {}, 0);
    return {normalize_dataset(parts.train, kImageSize), normalize_dataset(parts.val, kImageSize)};
}

const FineGrainedData& balanced() {
    static const FineGrainedData d = synth_fine_grained(4, 5, 100, kImageSize, 0);
    return d;
}

const TaskData& fine_task() {
    static const TaskData t = task_data(balanced().fine);
    return t;
}

const TaskData& imbalanced_task() {
    static const TaskData t = [] {
        SynthOptions opt;
        opt.class_sizes = imbalanced_class_sizes(20, 20, 200, 123);
        return task_data(synth_fine_grained(opt).fine);
    }();
    return t;
}

/// Network trained from scratch on the coarse labels; every transfer starts here.
const std::vector<RawTensor>& pretrained() {
    static const std::vector<RawTensor> w = [] {
        const auto coarse = task_data(balanced().coarse);
        auto m = build_model<float>(toy_config(4, kImageSize), 1);
        TrainConfig cfg;
        cfg.opt.learning_rate[GroupLetter::E] = kPretrainLr;
        cfg.weighted_sampling = false;
        const auto r = train(m, parse_scheme(std::string(kPretrainEpochs, 'E')), coarse.train, coarse.val, cfg);
        std::printf("  pretrained on coarse labels: val top-1 %.3f\n", r.best_top1);
        return model_tensors(r.best);
    }();
    return w;
}

Model<float> transfer_model(std::uint64_t seed) {
    auto m = build_model<float>(toy_config(20, kImageSize), 100 + seed);
    load_tensors(m, pretrained(), {.skip_classifier = true});
    return m;
}

struct RunSpec {
    std::string scheme = kAttentionScheme;
    AttentionShape shape = AttentionShape::InTimesOut;
    RegularizerConfig reg{RegularizerKind::L2, 1e-3};
    bool weighted = true;
    std::uint64_t seed = 0;
    bool imbalanced = false;

    std::string key() const {
        return fmt("%s/%s/%s/%g/%d/%llu/%d", scheme.c_str(), std::string(to_string(shape)).c_str(),
                   std::string(to_string(reg.kind)).c_str(), reg.lambda, int(weighted),
                   static_cast<unsigned long long>(seed), int(imbalanced));
    }
};

struct RunOutcome {
    TrainResult result;
    Model<float> final_model;
    double best_top3 = 0;  // top-3 at the best top-1 epoch
    std::vector<double> curve;
};

const RunOutcome& run(const RunSpec& spec) {
    static std::map<std::string, RunOutcome> cache;
    if (auto it = cache.find(spec.key()); it != cache.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    const auto& data = spec.imbalanced ? imbalanced_task() : fine_task();
    auto m = transfer_model(spec.seed);
    const auto scheme = parse_scheme(spec.scheme);
    if (scheme.contains(GroupLetter::A)) attach_attention(m, spec.shape);
    TrainConfig cfg;
    cfg.seed = spec.seed;
    cfg.reg = spec.reg;
    cfg.weighted_sampling = spec.weighted;
    cfg.opt.learning_rate[GroupLetter::F] = kLrF;
    cfg.opt.learning_rate[GroupLetter::A] = kLrA;
    RunOutcome out;
    out.result = train(m, scheme, data.train, data.val, cfg);
    out.final_model = std::move(m);
    out.best_top3 = out.result.reports[static_cast<std::size_t>(out.result.best_epoch - 1)].top3;
    for (const auto& r : out.result.reports) out.curve.push_back(r.top1);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  run %-44s best top-1 %.3f @%2d  top-3 %.3f  (%.0fs)\n", spec.key().c_str(), out.result.best_top1,
                out.result.best_epoch, out.best_top3, secs);
    std::fflush(stdout);
    return cache.emplace(spec.key(), std::move(out)).first->second;
}

std::vector<float> attention_entries(const Model<float>& m) {
    std::vector<float> all;
    for (const auto* c : m.conv_layers()) all.insert(all.end(), c->attn.data().begin(), c->attn.data().end());
    return all;
}

// ---------------------------------------------------------------------------

Verdict identity_at_attach() {
    auto base = transfer_model(0);
    base.bn_training = false;
    auto attached = base.clone();
    attach_attention(attached, AttentionShape::InTimesOut);
    auto out_only = base.clone();
    attach_attention(out_only, AttentionShape::OutOnly);
    std::mt19937_64 rng(2024);
    int mismatches = 0;
    NoGradGuard no_grad;
    for (int b = 0; b < 100; ++b) {
        const auto x = oracle::random_tensor<float>({4, 3, kImageSize, kImageSize}, rng, -2, 2);
        const auto ref = base.forward(x).values();
        mismatches += attached.forward(x).values() != ref;
        mismatches += out_only.forward(x).values() != ref;
    }
    return {mismatches == 0, fmt("%d of 200 batch logits differ (both attention shapes)", mismatches)};
}

Verdict gradcheck_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(7);
    double worst_op = 0;
    std::string worst_name;
    auto op = [&](const std::string& name, std::vector<Tensor<double>> in,
                  const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f) {
        const auto r = oracle::gradcheck(std::move(in), f);
        if (r.max_rel_error >= worst_op) worst_op = r.max_rel_error, worst_name = name;
    };
    using V = std::vector<Tensor<double>>;
    op("conv2d", {oracle::random_tensor({2, 3, 6, 6}, rng), oracle::random_tensor({4, 3, 3, 3}, rng)},
       [](const V& in) { return oracle::weighted_sum(conv2d(in[0], in[1], 2, 1)); });
    op("conv2d 1x1", {oracle::random_tensor({2, 4, 5, 5}, rng), oracle::random_tensor({3, 4, 1, 1}, rng)},
       [](const V& in) { return oracle::weighted_sum(conv2d(in[0], in[1], 1, 0)); });
    op("batchnorm train",
       {oracle::random_tensor({3, 2, 4, 4}, rng), oracle::random_tensor({2}, rng, 0.5, 1.5), oracle::random_tensor({2}, rng)},
       [](const V& in) {
           auto rm = Tensor<double>::zeros({2}), rv = Tensor<double>::ones({2});
           return oracle::weighted_sum(batchnorm2d(in[0], in[1], in[2], rm, rv, true));
       });
    op("batchnorm eval",
       {oracle::random_tensor({2, 2, 3, 3}, rng), oracle::random_tensor({2}, rng, 0.5, 1.5), oracle::random_tensor({2}, rng)},
       [](const V& in) {
           auto rm = Tensor<double>::full({2}, 0.3), rv = Tensor<double>::full({2}, 1.7);
           return oracle::weighted_sum(batchnorm2d(in[0], in[1], in[2], rm, rv, false));
       });
    const int labels[] = {3, 0, 9, 5};
    op("cross-entropy", {oracle::random_tensor({4, 10}, rng, -2, 2)},
       [&](const V& in) { return softmax_cross_entropy(in[0], labels); });
    op("matmul", {oracle::random_tensor({3, 4}, rng), oracle::random_tensor({4, 5}, rng)},
       [](const V& in) { return oracle::weighted_sum(matmul(in[0], in[1])); });
    op("linear", {oracle::random_tensor({3, 4}, rng), oracle::random_tensor({5, 4}, rng), oracle::random_tensor({5}, rng)},
       [](const V& in) { return oracle::weighted_sum(linear(in[0], in[1], in[2])); });
    op("relu", {oracle::away_from_zero({2, 3, 4}, rng)}, [](const V& in) { return oracle::weighted_sum(relu(in[0])); });
    op("add broadcast", {oracle::random_tensor({2, 3, 2, 2}, rng), oracle::random_tensor({2, 3, 1, 1}, rng)},
       [](const V& in) { return oracle::weighted_sum(add(in[0], in[1])); });
    op("mul broadcast", {oracle::random_tensor({2, 3, 2, 2}, rng), oracle::random_tensor({2, 1, 1, 1}, rng)},
       [](const V& in) { return oracle::weighted_sum(mul(in[0], in[1])); });
    op("scalar_mul", {oracle::random_tensor({4, 3}, rng)},
       [](const V& in) { return oracle::weighted_sum(scalar_mul(in[0], -2.5)); });
    {
        std::vector<double> v(2 * 2 * 6 * 6);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i);
        std::shuffle(v.begin(), v.end(), rng);
        op("maxpool", {Tensor<double>({2, 2, 6, 6}, v)}, [](const V& in) { return oracle::weighted_sum(maxpool2d(in[0], 3, 2, 1)); });
    }
    op("global_avgpool", {oracle::random_tensor({2, 3, 4, 4}, rng)},
       [](const V& in) { return oracle::weighted_sum(global_avgpool(in[0])); });
    op("reshape", {oracle::random_tensor({2, 6}, rng)}, [](const V& in) { return oracle::weighted_sum(reshape(in[0], {3, 4})); });
    op("sum", {oracle::random_tensor({2, 6}, rng)}, [](const V& in) { return sum(in[0]); });
    op("mean", {oracle::random_tensor({2, 6}, rng)}, [](const V& in) { return mean(in[0]); });
    op("channel_mean", {oracle::random_tensor({2, 3, 2, 2}, rng)}, [](const V& in) { return channel_mean(in[0], 1); });
    for (auto kind : {RegularizerKind::L1, RegularizerKind::L2, RegularizerKind::DivergeL2}) {
        op("penalty " + std::string(to_string(kind)), {oracle::random_tensor({4, 3, 1, 1}, rng, 0.2, 1.8)},
           [kind](const V& in) { return filter_penalty(in[0], kind); });
    }
    for (auto shape : {AttentionShape::OutOnly, AttentionShape::InTimesOut}) {
        const auto w = oracle::random_tensor({4, 3, 3, 3}, rng);
        const Shape adims = shape == AttentionShape::OutOnly ? Shape{4, 1, 1, 1} : Shape{4, 3, 1, 1};
        op("attention conv " + std::string(to_string(shape)),
           {oracle::random_tensor({2, 3, 5, 5}, rng), oracle::random_tensor(adims, rng, 0.2, 1.8)}, [&](const V& in) {
               ConvLayer<double> c;
               c.weight = w;
               c.pad = 1;
               c.attn = in[1];
               c.attn_shape = shape;
               return oracle::weighted_sum(c.forward(in[0]));
           });
    }

    // End to end: cross-entropy plus penalty of a small attended network,
    // differentiated with respect to every attention tensor and the classifier.
    ModelConfig cfg;
    cfg.input_size = 8;
    cfg.stage_channels = {4, 8};
    cfg.blocks_per_stage = {1, 1};
    cfg.num_classes = 5;
    auto net = build_model<double>(cfg, 3);
    attach_attention(net, AttentionShape::InTimesOut);
    V handles;
    for (auto* c : net.conv_layers()) {
        for (auto& v : c->attn.mutable_data()) v = std::uniform_real_distribution<double>(0.3, 1.7)(rng);
        handles.push_back(c->attn);
    }
    handles.push_back(net.fc_weight);
    handles.push_back(net.fc_bias);
    const auto x = oracle::random_tensor({4, 3, 8, 8}, rng);
    const int y[] = {0, 4, 2, 1};
    const RegularizerConfig reg{RegularizerKind::DivergeL2, 0.1};
    const auto e2e = oracle::gradcheck(handles, [&](const V&) {
        const auto xent = softmax_cross_entropy(net.forward(x), y);
        return total_loss<double>(xent, attention_layers(net), reg);
    }, 1e-5);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = worst_op < 1e-5 && e2e.max_rel_error < 1e-4 && secs < 60.0;
    return {pass, fmt("worst op %.2e (%s) < 1e-5; end-to-end %.2e < 1e-4; %.1fs < 60s", worst_op, worst_name.c_str(),
                      e2e.max_rel_error, secs)};
}

Verdict attention_beats_fc() {
    double att = 0, fc = 0;
    std::string per_seed;
    for (int s = 0; s < kSeeds; ++s) {
        RunSpec a;
        a.seed = static_cast<std::uint64_t>(s);
        RunSpec f = a;
        f.scheme = kFcScheme;
        const double ra = run(a).result.best_top1, rf = run(f).result.best_top1;
        att += ra / kSeeds;
        fc += rf / kSeeds;
        per_seed += fmt(" s%d %.1f/%.1f", s, 100 * ra, 100 * rf);
    }
    double w1 = 0, u1 = 0, w3 = 0, u3 = 0;
    for (int s = 0; s < kSeeds; ++s) {
        RunSpec w;
        w.seed = static_cast<std::uint64_t>(s);
        w.imbalanced = true;
        RunSpec u = w;
        u.weighted = false;
        w1 += run(w).result.best_top1 / kSeeds;
        u1 += run(u).result.best_top1 / kSeeds;
        w3 += run(w).best_top3 / kSeeds;
        u3 += run(u).best_top3 / kSeeds;
    }
    const double gap = 100 * (att - fc);
    const bool pass = gap >= 5.0 && w1 >= u1 && w3 > u3;
    return {pass, fmt("mean best top-1 attention %.1f vs FC %.1f, gap %.1f >= 5 [%s ]; imbalanced weighted vs "
                      "unweighted top-1 %.1f vs %.1f (gap >= 0), top-3 %.1f vs %.1f (improves)",
                      100 * att, 100 * fc, gap, per_seed.c_str(), 100 * w1, 100 * u1, 100 * w3, 100 * u3)};
}

Verdict regularizer_distributions() {
    auto final_attention = [](RegularizerKind kind, double lambda) {
        RunSpec s;
        s.reg = {kind, lambda};
        return attention_entries(run(s).final_model);
    };
    auto frac_small = [](const std::vector<float>& a) {
        std::size_t n = 0;
        for (float v : a) n += std::abs(v) < 0.1f;
        return static_cast<double>(n) / static_cast<double>(a.size());
    };
    auto stddev = [](const std::vector<float>& a) {
        double m = 0, s = 0;
        for (float v : a) m += v;
        m /= static_cast<double>(a.size());
        for (float v : a) s += (v - m) * (v - m);
        return std::sqrt(s / static_cast<double>(a.size()));
    };
    const double l1 = frac_small(final_attention(RegularizerKind::L1, 1e-3));
    const double l2 = frac_small(final_attention(RegularizerKind::L2, 1e-3));
    const double div = stddev(final_attention(RegularizerKind::DivergeL2, 1e-3));
    const double none = stddev(final_attention(RegularizerKind::None, 0.0));
    const bool a = l1 > 0 && l1 >= 3 * l2;
    const bool b = div >= 2 * none;
    return {a && b, fmt("(a) |a|<0.1 fraction L1 %.4f vs L2 %.4f, ratio %.1f >= 3; (b) std DivergeL2 %.3f vs lambda=0 "
                        "%.3f, ratio %.2f >= 2",
                        l1, l2, l2 > 0 ? l1 / l2 : INFINITY, div, none, none > 0 ? div / none : INFINITY)};
}

Verdict shape_experiment() {
    std::vector<double> in_curve, out_curve;
    for (int s = 0; s < kSeeds; ++s) {
        RunSpec in;
        in.seed = static_cast<std::uint64_t>(s);
        RunSpec out = in;
        out.shape = AttentionShape::OutOnly;
        const auto& ci = run(in).curve;
        const auto& co = run(out).curve;
        in_curve.resize(ci.size());
        out_curve.resize(co.size());
        for (std::size_t e = 0; e < ci.size(); ++e) in_curve[e] += ci[e] / kSeeds;
        for (std::size_t e = 0; e < co.size(); ++e) out_curve[e] += co[e] / kSeeds;
    }
    auto best = [](const std::vector<double>& c) { return *std::max_element(c.begin(), c.end()); };
    auto reach = [](const std::vector<double>& c, double target) {
        for (std::size_t e = 0; e < c.size(); ++e)
            if (c[e] >= target) return static_cast<int>(e + 1);
        return static_cast<int>(c.size());
    };
    const double bi = best(in_curve), bo = best(out_curve);
    const int ei = reach(in_curve, bi - 0.01), eo = reach(out_curve, bo - 0.01);
    const bool pass = bi >= bo - 0.01 && eo < ei;
    return {pass, fmt("3-seed mean curves: InTimesOut best %.1f vs OutOnly best %.1f (>= -1 pt); within 1 pt of own "
                      "best at epoch %d (OutOnly) vs %d (InTimesOut), strictly earlier",
                      100 * bi, 100 * bo, eo, ei)};
}

Verdict fold_and_prune() {
    RunSpec spec;
    auto trained = run(spec).result.best.clone();
    auto folded = fold_attention(trained);
    const auto& val = fine_task().val;
    std::vector<std::size_t> idx(val.count());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto [x, y] = val.batch(idx);
    trained.bn_training = folded.bn_training = false;
    bool exact;
    {
        NoGradGuard no_grad;
        exact = trained.forward(x).values() == folded.forward(x).values();
    }
    const double top_folded = evaluate(folded, val).top1;
    auto pruned = prune(trained, KeepFraction{0.7});
    const double top_pruned = evaluate(pruned, val).top1;
    const auto before = folded.num_parameters(), after = pruned.num_parameters();
    const double cut = 1.0 - static_cast<double>(after) / static_cast<double>(before);
    const double drop = 100 * (top_folded - top_pruned);
    return {exact && cut >= 0.25 && drop <= 2.0,
            fmt("fold logits %s; keep 0.7: parameters %lld -> %lld (%.1f%% cut >= 25%%), val top-1 %.1f -> %.1f "
                "(drop %.1f <= 2)",
                exact ? "bitwise equal" : "DIFFER", static_cast<long long>(before), static_cast<long long>(after),
                100 * cut, 100 * top_folded, 100 * top_pruned, drop)};
}

Verdict frozen_group_conservation() {
    auto m = transfer_model(0);
    attach_attention(m, AttentionShape::InTimesOut);
    TrainConfig cfg;
    cfg.opt.learning_rate = {{GroupLetter::F, 0.1}, {GroupLetter::A, 0.1}, {GroupLetter::B, 0.1}, {GroupLetter::E, 0.1}};
    SgdMomentum<float> opt(0.9);
    std::mt19937_64 rng(77);
    const GroupLetter letters[] = {GroupLetter::F, GroupLetter::A, GroupLetter::B, GroupLetter::E};
    const auto& data = fine_task().train;
    std::vector<std::size_t> idx(16);
    int violations = 0, moved_steps = 0;
    std::optional<GroupLetter> prev;
    for (int trial = 0; trial < 200; ++trial) {
        const auto g = letters[rng() % 4];
        set_trainable(m, g);
        if (prev != g) opt.reset();
        prev = g;
        for (auto& i : idx) i = rng() % data.count();
        auto [x, y] = data.batch(idx);
        std::map<std::string, std::vector<float>> before;
        for (const auto& p : m.parameters()) before[p.name] = p.tensor.values();
        train_step(m, x, y, g, cfg, opt);
        bool moved = false;
        for (const auto& p : m.parameters()) {
            const bool same = p.tensor.values() == before.at(p.name);
            if (!in_group(p.role, g) && !same) ++violations;
            if (in_group(p.role, g) && !same) moved = true;
        }
        moved_steps += moved;
    }
    return {violations == 0 && moved_steps == 200,
            fmt("%d frozen tensors changed across 200 random (letter, step) pairs; active group moved in %d/200", violations,
                moved_steps)};
}

Verdict formats() {
    std::vector<std::string> problems;
    // ATW1
    const auto& model = run(RunSpec{}).result.best;
    const auto tensors = model_tensors(model);
    const auto bytes = encode_atw1(tensors);
    std::vector<std::pair<std::string, Shape>> entries;
    for (const auto& t : tensors) entries.emplace_back(t.name, t.dims);
    if (bytes.size() != oracle::atw1_bytes(entries)) problems.push_back("ATW1 size");
    const auto back = decode_atw1(bytes);
    bool same = back.size() == tensors.size();
    for (std::size_t i = 0; same && i < back.size(); ++i)
        same = back[i].name == tensors[i].name && back[i].dims == tensors[i].dims &&
               std::memcmp(back[i].values.data(), tensors[i].values.data(), 4 * tensors[i].values.size()) == 0;
    if (!same) problems.push_back("ATW1 round trip");
    std::mt19937_64 rng(8);
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < 256; ++i) positions.push_back(i);
    for (std::size_t i = 0; i < 4; ++i) positions.push_back(bytes.size() - 1 - i);
    for (int i = 0; i < 2000; ++i) positions.push_back(rng() % bytes.size());
    int undetected = 0;
    for (auto pos : positions) {
        auto bad = bytes;
        bad[pos] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        try {
            decode_atw1(bad);
            ++undetected;
        } catch (const DataError&) {
        }
    }
    if (undetected) problems.push_back(fmt("%d ATW1 corruptions undetected", undetected));

    // IDB1
    const auto& ds = balanced().fine;
    const auto idb = encode_idb1(ds);
    if (idb.size() != oracle::idb1_bytes(ds.size(), ds.channels, ds.height, ds.width)) problems.push_back("IDB1 size");
    const auto ds_back = decode_idb1(idb);
    if (ds_back.pixels != ds.pixels || ds_back.labels != ds.labels || encode_idb1(ds_back) != idb)
        problems.push_back("IDB1 round trip");
    // Structural bytes: magic, count, C, H, W, and the high byte of every sampled label.
    int idb_checked = 0, idb_missed = 0;
    std::vector<std::size_t> idb_pos;
    for (std::size_t i = 0; i < 20; ++i) idb_pos.push_back(i);
    for (int i = 0; i < 200; ++i) idb_pos.push_back(kIdb1HeaderBytes + (rng() % ds.size()) * (4 + ds.record_bytes()) + 3);
    for (auto pos : idb_pos) {
        auto bad = idb;
        bad[pos] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        ++idb_checked;
        try {
            decode_idb1(bad);
            ++idb_missed;
        } catch (const DataError&) {
        }
    }
    if (idb_missed) problems.push_back(fmt("%d IDB1 corruptions undetected", idb_missed));
    std::string detail = fmt("ATW1 %zu bytes (tally ok), %zu corruptions all detected by CRC; IDB1 %zu bytes (tally "
                             "ok), %d structural-byte corruptions detected (payload has no checksum)",
                             bytes.size(), positions.size(), idb.size(), idb_checked);
    if (!problems.empty()) {
        detail = "problems:";
        for (const auto& p : problems) detail += " [" + p + "]";
    }
    return {problems.empty(), detail};
}

Verdict sampler_frequencies() {
    const std::vector<int> counts{10, 30, 60};
    std::vector<int> labels;
    for (int k = 0; k < 3; ++k) labels.insert(labels.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(k)]), k);
    WeightedSampler sampler(sampler_weights(counts, labels));
    std::mt19937_64 rng(9);
    const auto draws = sampler.draw(100000, rng);
    double hits[3] = {0, 0, 0};
    for (auto i : draws) ++hits[labels[i]];
    double worst = 0;
    for (double h : hits) worst = std::max(worst, std::abs(h / 1e5 - 1.0 / 3.0));
    return {worst <= 0.02, fmt("frequencies %.4f %.4f %.4f, max deviation %.4f <= 0.02", hits[0] / 1e5, hits[1] / 1e5,
                               hits[2] / 1e5, worst)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"identity at attach", identity_at_attach},
        {"gradcheck suite", gradcheck_suite},
        {"attention beats FC-only", attention_beats_fc},
        {"regularizer distributions", regularizer_distributions},
        {"attention shape experiment", shape_experiment},
        {"fold and prune", fold_and_prune},
        {"frozen-group conservation", frozen_group_conservation},
        {"formats", formats},
        {"sampler frequencies", sampler_frequencies},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(n)) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::printf("%s %d. %s: %s\n", v.pass ? "PASS" : "FAIL", n, criteria[i].first, v.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
