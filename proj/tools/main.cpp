#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "attnconv/attnconv.hpp"

using namespace attnconv;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Hash of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_sha1(const fs::path& path) {
    const auto bytes = detail::read_file(path);
    std::string header = "blob " + std::to_string(bytes.size());
    header.push_back('\0');
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char two[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(two, sizeof two, "%02x", md[i]);
        hex += two;
    }
    return hex;
}

/// Owns the output directory for one run: creates it, holds a lock file, and
/// writes the manifest at the end.
class RunDir {
public:
    RunDir(const fs::path& dir, const std::vector<std::string>& argv, json flags) : dir_(dir) {
        fs::create_directories(dir_);
        lock_ = dir_ / ".lock";
        std::FILE* f = std::fopen(lock_.c_str(), "wx");
        if (f == nullptr) throw DataError("output directory " + dir_.string() + " is locked by another run (" + lock_.string() + ")");
        std::fclose(f);
        manifest_["argv"] = argv;
        manifest_["flags"] = std::move(flags);
        manifest_["formats"] = {{"weights", "ATW1 v1"}, {"dataset", "IDB1 v1"}};
        manifest_["started"] = utc_now();
        manifest_["inputs"] = json::object();
        manifest_["outputs"] = json::object();
    }
    ~RunDir() {
        std::error_code ec;
        fs::remove(lock_, ec);
    }
    RunDir(const RunDir&) = delete;
    RunDir& operator=(const RunDir&) = delete;

    fs::path path(const std::string& name) const { return dir_ / name; }
    void input(const fs::path& p) { manifest_["inputs"][p.string()] = git_blob_sha1(p); }
    void output(const std::string& name) { manifest_["outputs"][name] = git_blob_sha1(path(name)); }
    json& extra() { return manifest_; }

    void finish() {
        manifest_["finished"] = utc_now();
        std::ofstream out(path("manifest.json"));
        out << manifest_.dump(2) << '\n';
    }

private:
    fs::path dir_;
    fs::path lock_;
    json manifest_;
};

ModelConfig arch_config(const std::string& arch, int classes, int size) {
    if (arch == "toy") return toy_config(classes, size);
    if (arch == "resnet50") return resnet50_config(classes, size);
    throw ConfigError("unknown --arch '" + arch + "' (expected toy or resnet50)");
}

void require_file(const std::string& flag, const fs::path& p) {
    if (!fs::is_regular_file(p)) throw DataError(flag + " " + p.string() + ": no such file");
}

/// Builds a model shaped like a checkpoint (attention, pruned widths) and loads it.
Model<float> model_from_checkpoint(const std::string& arch, int size, const std::vector<RawTensor>& tensors,
                                   std::optional<int> classes = std::nullopt, bool skip_classifier = false) {
    int n = classes.value_or(0);
    if (!classes) {
        for (const auto& t : tensors)
            if (t.name == "fc.weight") n = static_cast<int>(t.dims.at(0));
        if (n == 0) throw DataError("checkpoint has no fc.weight; cannot infer the class count");
    }
    auto m = build_model<float>(arch_config(arch, n, size), 0);
    adopt_checkpoint_shapes(m, tensors);
    if (const auto shape = stored_attention_shape(tensors)) attach_attention(m, *shape);
    load_tensors(m, tensors, {.skip_classifier = skip_classifier});
    return m;
}

struct CommonModel {
    std::string arch = "toy";
    int size = 32;
};

void add_model_flags(CLI::App* sub, CommonModel& m) {
    sub->add_option("--arch", m.arch, "Network layout: toy or resnet50")->capture_default_str();
    sub->add_option("--size", m.size, "Input resolution")->capture_default_str()->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    int coarse = 4, fine_per = 5, per_class = 100, size = 32;
    std::uint64_t seed = 0;
    int min_count = 0, max_count = 0;
    std::string out;
};

int run_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
    SynthOptions opt;
    opt.num_coarse = a.coarse;
    opt.fine_per_coarse = a.fine_per;
    opt.per_class = a.per_class;
    opt.size = a.size;
    opt.seed = a.seed;
    if (a.min_count > 0 || a.max_count > 0) {
        opt.class_sizes = imbalanced_class_sizes(a.coarse * a.fine_per, a.min_count, a.max_count, a.seed);
    }
    const auto data = synth_fine_grained(opt);
    split_indices(data.fine, {}, 0);  // surfaces stratification errors before writing

    RunDir run(a.out, argv,
               {{"coarse", a.coarse}, {"fine_per", a.fine_per}, {"per_class", a.per_class}, {"size", a.size},
                {"seed", a.seed}, {"min_count", a.min_count}, {"max_count", a.max_count}});
    save_dataset(data.coarse, run.path("coarse.idb"));
    save_dataset(data.fine, run.path("fine.idb"));
    run.output("coarse.idb");
    run.output("fine.idb");
    run.finish();
    std::cout << "wrote " << data.fine.size() << " records to " << run.path("coarse.idb").string() << " and "
              << run.path("fine.idb").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data, weights, out;
    CommonModel model;
    std::string scheme;
    std::string reg = "diverge";
    double lambda = 1e-3;
    std::string attn = "inout";
    double clamp = 2.0;
    std::uint64_t seed = 0;
    std::uint64_t split_seed = 0;
    int batch = 32;
    double lr_f = 1e-2, lr_a = 1e-2, lr_b = 1e-3, lr_e = 1e-3;
    double momentum = 0.9;
    std::string sampling = "weighted";
};

void add_train_flags(CLI::App* sub, TrainArgs& a, const std::string& default_scheme) {
    a.scheme = default_scheme;
    sub->add_option("--data", a.data, "IDB1 dataset")->required();
    sub->add_option("--out", a.out, "Output directory")->required();
    add_model_flags(sub, a.model);
    sub->add_option("--scheme", a.scheme, "One letter per epoch from F, A, B, E")->capture_default_str();
    sub->add_option("--reg", a.reg, "Attention regularizer")
        ->check(CLI::IsMember({"l1", "l2", "diverge", "none"}))
        ->capture_default_str();
    sub->add_option("--lambda", a.lambda, "Regularizer weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--attn", a.attn, "Attention shape")->check(CLI::IsMember({"out", "inout"}))->capture_default_str();
    sub->add_option("--clamp", a.clamp, "Attention upper clamp")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--seed", a.seed, "Model and sampling seed")->capture_default_str();
    sub->add_option("--split-seed", a.split_seed, "Train/val/test split seed")->capture_default_str();
    sub->add_option("--batch", a.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--lr-f", a.lr_f)->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--lr-a", a.lr_a)->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--lr-b", a.lr_b)->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--lr-e", a.lr_e)->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--momentum", a.momentum)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sub->add_option("--sampling", a.sampling, "weighted or uniform")
        ->check(CLI::IsMember({"weighted", "uniform"}))
        ->capture_default_str();
}

json train_flags(const TrainArgs& a) {
    return {{"data", a.data},     {"weights", a.weights},     {"out", a.out},       {"arch", a.model.arch},
            {"size", a.model.size}, {"scheme", a.scheme},     {"reg", a.reg},       {"lambda", a.lambda},
            {"attn", a.attn},     {"clamp", a.clamp},         {"seed", a.seed},     {"split_seed", a.split_seed},
            {"batch", a.batch},   {"lr_f", a.lr_f},           {"lr_a", a.lr_a},     {"lr_b", a.lr_b},
            {"lr_e", a.lr_e},     {"momentum", a.momentum},   {"sampling", a.sampling}};
}

int run_train(const TrainArgs& a, bool transfer, const std::vector<std::string>& argv) {
    // Validate everything that needs no file contents first.
    const auto scheme = parse_scheme(a.scheme);
    arch_config(a.model.arch, 1, a.model.size).validate();
    if (!transfer && scheme.contains(GroupLetter::A)) {
        throw ConfigError("pretrain schemes cannot contain A; attention is attached by transfer");
    }
    TrainConfig cfg;
    cfg.reg = {parse_regularizer(a.reg), a.lambda};
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    cfg.weighted_sampling = a.sampling == "weighted";
    cfg.opt.learning_rate = {{GroupLetter::F, a.lr_f}, {GroupLetter::A, a.lr_a}, {GroupLetter::B, a.lr_b}, {GroupLetter::E, a.lr_e}};
    cfg.opt.momentum = a.momentum;
    require_file("--data", a.data);
    if (transfer) require_file("--weights", a.weights);

    const auto ds = load_dataset(a.data);
    const auto parts = split(ds, {}, a.split_seed);
    const auto train_set = normalize_dataset(parts.train, a.model.size);
    const auto val_set = normalize_dataset(parts.val, a.model.size);

    Model<float> model;
    if (transfer) {
        model = model_from_checkpoint(a.model.arch, a.model.size, read_atw1(a.weights), ds.num_classes, true);
        if (scheme.contains(GroupLetter::A) && !model.has_attention()) {
            attach_attention(model, a.attn == "out" ? AttentionShape::OutOnly : AttentionShape::InTimesOut, a.clamp);
        }
    } else {
        model = build_model<float>(arch_config(a.model.arch, ds.num_classes, a.model.size), a.seed);
    }

    RunDir run(a.out, argv, train_flags(a));
    run.input(a.data);
    if (transfer) run.input(a.weights);
    cfg.on_epoch = [](const EpochReport& r) {
        std::printf("epoch %2d %c loss %.4f penalty %.4g top1 %.4f top3 %.4f (%.1fs)\n", r.epoch, r.letter, r.loss,
                    r.penalty, r.top1, r.top3, r.seconds);
        std::fflush(stdout);
    };
    const auto result = train(model, scheme, train_set, val_set, cfg);
    write_epoch_csv(run.path("epochs.csv"), result.reports);
    save_weights(result.best, run.path("best.atw"));
    run.output("epochs.csv");
    run.output("best.atw");
    run.extra()["best"] = {{"epoch", result.best_epoch}, {"top1", result.best_top1}};
    run.finish();
    std::printf("best val top1 %.4f at epoch %d\n", result.best_top1, result.best_epoch);
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string data, weights, out, split = "test";
    CommonModel model;
    std::uint64_t split_seed = 0;
};

int run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
    arch_config(a.model.arch, 1, a.model.size).validate();
    require_file("--data", a.data);
    require_file("--weights", a.weights);
    const auto ds = load_dataset(a.data);
    const auto parts = split(ds, {}, a.split_seed);
    const auto& chosen = a.split == "train" ? parts.train : a.split == "val" ? parts.val : parts.test;
    auto model = model_from_checkpoint(a.model.arch, a.model.size, read_atw1(a.weights), ds.num_classes);
    const auto r = evaluate(model, normalize_dataset(chosen, a.model.size));

    RunDir run(a.out, argv,
               {{"data", a.data}, {"weights", a.weights}, {"out", a.out}, {"arch", a.model.arch},
                {"size", a.model.size}, {"split", a.split}, {"split_seed", a.split_seed}});
    run.input(a.data);
    run.input(a.weights);
    {
        std::ofstream out(run.path("metrics.json"));
        out << json{{"split", a.split}, {"count", chosen.size()}, {"top1", r.top1}, {"top3", r.top3}}.dump(2) << '\n';
    }
    run.output("metrics.json");
    run.finish();
    std::printf("%s top1 %.4f top3 %.4f (%zu images)\n", a.split.c_str(), r.top1, r.top3, chosen.size());
    return 0;
}

// ---------------------------------------------------------------------------

struct RankArgs {
    std::string weights, out;
    CommonModel model;
};

int run_rank(const RankArgs& a, const std::vector<std::string>& argv) {
    arch_config(a.model.arch, 1, a.model.size).validate();
    require_file("--weights", a.weights);
    const auto tensors = read_atw1(a.weights);
    if (!stored_attention_shape(tensors)) throw DataError(a.weights + " holds no attention tensors to rank");
    const auto model = model_from_checkpoint(a.model.arch, a.model.size, tensors);
    const auto ranks = rank_channels(model);

    RunDir run(a.out, argv, {{"weights", a.weights}, {"out", a.out}, {"arch", a.model.arch}, {"size", a.model.size}});
    run.input(a.weights);
    write_rank_csv(run.path("ranks.csv"), ranks);
    run.output("ranks.csv");
    run.finish();
    std::printf("ranked %zu channels\n", ranks.size());
    return 0;
}

// ---------------------------------------------------------------------------

struct PruneArgs {
    std::string weights, out;
    CommonModel model;
    std::optional<double> keep, threshold;
};

int run_prune(const PruneArgs& a, const std::vector<std::string>& argv) {
    arch_config(a.model.arch, 1, a.model.size).validate();
    if (a.keep.has_value() == a.threshold.has_value()) throw ConfigError("prune needs exactly one of --keep or --threshold");
    PrunePolicy policy = a.keep ? PrunePolicy{KeepFraction{*a.keep}} : PrunePolicy{Threshold{*a.threshold}};
    if (a.keep && !(*a.keep > 0.0 && *a.keep <= 1.0)) throw ConfigError("--keep must be in (0, 1]");
    if (a.threshold && !(*a.threshold >= 0.0)) throw ConfigError("--threshold must be >= 0");
    require_file("--weights", a.weights);
    const auto tensors = read_atw1(a.weights);
    if (!stored_attention_shape(tensors)) throw DataError(a.weights + " holds no attention tensors to prune by");
    const auto model = model_from_checkpoint(a.model.arch, a.model.size, tensors);
    const auto before = fold_attention(model).num_parameters();
    const auto pruned = prune(model, policy);

    json flags{{"weights", a.weights}, {"out", a.out}, {"arch", a.model.arch}, {"size", a.model.size}};
    flags["keep"] = a.keep ? json(*a.keep) : json(nullptr);
    flags["threshold"] = a.threshold ? json(*a.threshold) : json(nullptr);
    RunDir run(a.out, argv, flags);
    run.input(a.weights);
    save_weights(pruned, run.path("pruned.atw"));
    run.output("pruned.atw");
    run.extra()["parameters"] = {{"folded", before}, {"pruned", pruned.num_parameters()}, {"live", live_parameters(pruned)}};
    run.finish();
    std::printf("parameters %lld -> %lld (%lld live)\n", static_cast<long long>(before),
                static_cast<long long>(pruned.num_parameters()), static_cast<long long>(live_parameters(pruned)));
    return 0;
}

// ---------------------------------------------------------------------------

struct VizArgs {
    std::string weights, out, data, split = "val";
    CommonModel model;
    VizConfig viz;
    int top_k = 10;
    std::uint64_t split_seed = 0;
};

int run_viz(const VizArgs& a, const std::vector<std::string>& argv) {
    arch_config(a.model.arch, 1, a.model.size).validate();
    a.viz.validate();
    if (a.top_k < 1) throw ConfigError("--top-k must be >= 1");
    require_file("--weights", a.weights);
    if (!a.data.empty()) require_file("--data", a.data);
    auto model = model_from_checkpoint(a.model.arch, a.model.size, read_atw1(a.weights));
    detail::viz_target(model, a.viz.layer, a.viz.channel);
    std::vector<ImageScore> top;
    if (!a.data.empty()) {
        const auto parts = split(load_dataset(a.data), {}, a.split_seed);
        const auto& chosen = a.split == "train" ? parts.train : a.split == "val" ? parts.val : parts.test;
        const auto set = normalize_dataset(chosen, a.model.size);
        top = top_activating_images(model, a.viz.layer, a.viz.channel, set,
                                    std::min<std::size_t>(static_cast<std::size_t>(a.top_k), set.count()));
    }
    const auto r = activation_maximize(model, a.viz);

    RunDir run(a.out, argv,
               {{"weights", a.weights}, {"out", a.out}, {"arch", a.model.arch}, {"size", a.model.size},
                {"layer", a.viz.layer}, {"channel", a.viz.channel}, {"steps", a.viz.steps},
                {"step_size", a.viz.step_size}, {"blur_sigma", a.viz.blur_sigma}, {"blur_every", a.viz.blur_every},
                {"seed", a.viz.seed}, {"data", a.data}, {"split", a.split}, {"split_seed", a.split_seed},
                {"top_k", a.top_k}});
    run.input(a.weights);
    write_ppm(run.path("viz.ppm"), r.pixels(), a.model.size, a.model.size);
    write_trace_csv(run.path("trace.csv"), r);
    run.output("viz.ppm");
    run.output("trace.csv");
    if (!a.data.empty()) {
        run.input(a.data);
        std::ofstream out(run.path("top.csv"));
        out << "rank,index,score\n";
        for (std::size_t i = 0; i < top.size(); ++i) out << i + 1 << ',' << top[i].index << ',' << top[i].score << '\n';
        out.close();
        run.output("top.csv");
    }
    run.finish();
    std::printf("objective %.6g -> %.6g over %d steps\n", r.objective.front(), r.objective.back(), a.viz.steps);
    return 0;
}

// ---------------------------------------------------------------------------

int dispatch(std::vector<std::string> argv);

int run_replay(const std::string& manifest_path, const std::string& out) {
    require_file("--manifest", manifest_path);
    json m;
    try {
        std::ifstream in(manifest_path);
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(manifest_path + ": " + e.what());
    }
    if (!m.contains("argv") || !m["argv"].is_array()) throw DataError(manifest_path + ": no argv array");
    auto argv = m["argv"].get<std::vector<std::string>>();
    if (argv.empty() || argv[0] == "replay") throw DataError(manifest_path + ": not a replayable run");
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i)
        if (argv[i] == "--out") {
            argv[i + 1] = out;
            replaced = true;
        }
    if (!replaced) throw DataError(manifest_path + ": argv has no --out");
    return dispatch(argv);
}

int dispatch(std::vector<std::string> argv) {
    CLI::App app{"Attention-scaled convolution transfer learning toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "attnconv 1.0");

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic coarse/fine dataset pair");
    s->add_option("--coarse", synth.coarse)->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--fine-per", synth.fine_per)->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--per-class", synth.per_class)->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--size", synth.size)->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--seed", synth.seed)->capture_default_str();
    s->add_option("--min-count", synth.min_count, "Draw per-class counts from [min, max] instead of --per-class");
    s->add_option("--max-count", synth.max_count);
    s->add_option("--out", synth.out, "Output directory")->required();

    TrainArgs pre, xfer;
    auto* p = app.add_subcommand("pretrain", "Train a network from scratch");
    add_train_flags(p, pre, "EEEE");
    auto* t = app.add_subcommand("transfer", "Transfer a pretrained network with a training scheme");
    add_train_flags(t, xfer, "FFAAABAAABAA");
    t->add_option("--weights", xfer.weights, "Pretrained ATW1 checkpoint")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Top-1/top-3 accuracy of a checkpoint");
    e->add_option("--data", ev.data)->required();
    e->add_option("--weights", ev.weights)->required();
    e->add_option("--out", ev.out)->required();
    e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
    e->add_option("--split-seed", ev.split_seed)->capture_default_str();
    add_model_flags(e, ev.model);

    RankArgs rk;
    auto* r = app.add_subcommand("rank", "Rank channels by attention");
    r->add_option("--weights", rk.weights)->required();
    r->add_option("--out", rk.out)->required();
    add_model_flags(r, rk.model);

    PruneArgs pr;
    auto* pn = app.add_subcommand("prune", "Fold attention and drop low-attention channels");
    pn->add_option("--weights", pr.weights)->required();
    pn->add_option("--out", pr.out)->required();
    auto* keep = pn->add_option("--keep", pr.keep, "Per-layer keep fraction");
    auto* thr = pn->add_option("--threshold", pr.threshold, "Drop channels scoring below this");
    keep->excludes(thr);
    add_model_flags(pn, pr.model);

    VizArgs vz;
    auto* v = app.add_subcommand("viz", "Activation maximization and top-activating images");
    v->add_option("--weights", vz.weights)->required();
    v->add_option("--out", vz.out)->required();
    v->add_option("--layer", vz.viz.layer)->required();
    v->add_option("--channel", vz.viz.channel)->required();
    v->add_option("--steps", vz.viz.steps)->capture_default_str();
    v->add_option("--step-size", vz.viz.step_size)->capture_default_str();
    v->add_option("--blur-sigma", vz.viz.blur_sigma)->capture_default_str();
    v->add_option("--blur-every", vz.viz.blur_every)->capture_default_str();
    v->add_option("--seed", vz.viz.seed)->capture_default_str();
    v->add_option("--data", vz.data, "Dataset for top-activating images");
    v->add_option("--split", vz.split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
    v->add_option("--split-seed", vz.split_seed)->capture_default_str();
    v->add_option("--top-k", vz.top_k)->capture_default_str();
    add_model_flags(v, vz.model);

    std::string manifest, replay_out;
    auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
    rp->add_option("--manifest", manifest)->required();
    rp->add_option("--out", replay_out)->required();

    try {
        std::vector<std::string> reversed(argv.rbegin(), argv.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*s) return run_synth(synth, argv);
        if (*p) return run_train(pre, false, argv);
        if (*t) return run_train(xfer, true, argv);
        if (*e) return run_eval(ev, argv);
        if (*r) return run_rank(rk, argv);
        if (*pn) return run_prune(pr, argv);
        if (*v) return run_viz(vz, argv);
        if (*rp) return run_replay(manifest, replay_out);
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitUsage;
    } catch (const DivergenceError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitDiverged;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    return dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
