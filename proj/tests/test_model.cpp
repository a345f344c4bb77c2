#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "oracles.hpp"

using namespace attnconv;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.input_size = 32;
    cfg.stage_channels = {16, 32};
    cfg.blocks_per_stage = {1, 1};
    cfg.num_classes = 10;
    return cfg;
}

Tensor<float> random_batch(int n, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return oracle::random_tensor<float>({n, 3, size, size}, rng, -2, 2);
}

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "attnconv_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::map<std::string, std::vector<float>> snapshot(const Model<float>& m) {
    std::map<std::string, std::vector<float>> out;
    for (const auto& nt : m.state()) out[nt.name] = nt.tensor.values();
    return out;
}

}  // namespace

TEST(Model, ForwardShape) {
    auto m = build_model<float>(small_config(), 1);
    EXPECT_EQ(m.forward(random_batch(4, 32, 2)).dims(), (Shape{4, 10}));
}

TEST(Model, DeterministicInSeed) {
    EXPECT_EQ(snapshot(build_model<float>(small_config(), 7)), snapshot(build_model<float>(small_config(), 7)));
    EXPECT_NE(snapshot(build_model<float>(small_config(), 7)), snapshot(build_model<float>(small_config(), 8)));
}

TEST(Model, ParameterCountMatchesTally) {
    for (auto cfg : {small_config(), toy_config(20), resnet50_config(144, 64)}) {
        EXPECT_EQ(build_model<float>(cfg, 1).num_parameters(), oracle::param_tally(cfg));
    }
}

TEST(Model, TorchvisionStyleNames) {
    auto m = build_model<float>(toy_config(20), 1);
    std::vector<std::string> names;
    for (const auto& p : m.parameters()) names.push_back(p.name);
    EXPECT_EQ(names.front(), "conv1.weight");
    EXPECT_NE(std::find(names.begin(), names.end(), "layer2.0.downsample.0.weight"), names.end());
    EXPECT_NE(std::find(names.begin(), names.end(), "layer3.0.bn2.bias"), names.end());
    EXPECT_EQ(names.back(), "fc.bias");
    std::set<std::string> unique(names.begin(), names.end());
    EXPECT_EQ(unique.size(), names.size());
}

TEST(Model, InputTooSmallNamesStage) {
    auto cfg = toy_config(10, 2);
    try {
        build_model<float>(cfg, 1);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("stage 3"), std::string::npos) << e.what();
    }
}

TEST(Model, ResNet50StemChannelCounts) {
    auto m = build_model<float>(resnet50_config(144, 64), 1);
    EXPECT_EQ(m.stem.conv.weight.dims(), (Shape{64, 3, 7, 7}));
    attach_attention(m, AttentionShape::InTimesOut);
    EXPECT_EQ(m.stem.conv.attn.numel(), 192);
    EXPECT_EQ(m.forward(random_batch(1, 64, 3)).dims(), (Shape{1, 144}));
}

TEST(Groups, PartitionCoversEveryParameterOnce) {
    auto m = build_model<float>(toy_config(20), 1);
    attach_attention(m, AttentionShape::OutOnly);
    for (const auto& p : m.parameters()) {
        int exclusive = 0;
        for (auto g : {GroupLetter::F, GroupLetter::A, GroupLetter::B}) exclusive += in_group(p.role, g);
        exclusive += p.role == ParamRole::ConvWeight;
        EXPECT_EQ(exclusive, 1) << p.name;
        EXPECT_EQ(in_group(p.role, GroupLetter::E), !in_group(p.role, GroupLetter::A)) << p.name;
    }
}

TEST(Groups, SetTrainableExamples) {
    auto m = build_model<float>(small_config(), 1);
    EXPECT_THROW(set_trainable(m, GroupLetter::A), ConfigError);
    set_trainable(m, GroupLetter::F);
    int n = 0;
    for (const auto& p : m.parameters()) n += p.tensor.requires_grad();
    EXPECT_EQ(n, 2);
    EXPECT_FALSE(m.bn_training);

    attach_attention(m, AttentionShape::OutOnly);
    set_trainable(m, GroupLetter::A);
    std::int64_t channels = 0;
    for (const auto* c : m.conv_layers()) channels += c->out_channels();
    EXPECT_EQ(m.num_trainable(), channels);

    set_trainable(m, GroupLetter::B);
    EXPECT_TRUE(m.bn_training);
}

TEST(Groups, SetTrainableIsIdempotentAndTotal) {
    auto m = build_model<float>(small_config(), 1);
    attach_attention(m, AttentionShape::InTimesOut);
    std::mt19937_64 rng(4);
    const GroupLetter letters[] = {GroupLetter::F, GroupLetter::A, GroupLetter::B, GroupLetter::E};
    for (int i = 0; i < 20; ++i) {
        const auto g = letters[rng() % 4];
        set_trainable(m, g);
        set_trainable(m, g);
        for (const auto& p : m.parameters()) EXPECT_EQ(p.tensor.requires_grad(), in_group(p.role, g)) << p.name;
    }
}

TEST(Groups, EpochEGradientPattern) {
    auto m = build_model<float>(small_config(), 1);
    attach_attention(m, AttentionShape::OutOnly);
    set_trainable(m, GroupLetter::E);
    const int labels[] = {0, 1, 2, 3};
    backward(softmax_cross_entropy(m.forward(random_batch(4, 32, 5)), labels));
    for (const auto& p : m.parameters()) {
        if (p.role == ParamRole::Attention) {
            EXPECT_FALSE(p.tensor.has_grad()) << p.name;
        } else {
            ASSERT_TRUE(p.tensor.has_grad()) << p.name;
            double s = 0;
            for (float g : p.tensor.grad()) s += std::abs(g);
            EXPECT_GT(s, 0.0) << p.name;
        }
    }
}

TEST(Attach, PreservesLogitsAndCounts) {
    auto cfg = small_config();
    auto m = build_model<float>(cfg, 1);
    const auto x = random_batch(3, 32, 6);
    const auto before = m.forward(x).values();
    attach_attention(m, AttentionShape::InTimesOut);
    EXPECT_EQ(m.forward(x).values(), before);
    EXPECT_THROW(attach_attention(m, AttentionShape::OutOnly), ConfigError);

    ModelConfig two;
    two.stage_channels = {64, 128};
    two.blocks_per_stage = {1, 1};
    auto plain = build_model<float>(two, 1);
    attach_attention(plain, AttentionShape::OutOnly);
    // Stem 64, then per block the path convs and shortcut.
    std::int64_t n = 0;
    for (const auto* c : plain.conv_layers()) n += c->attn.numel();
    std::int64_t expected = 0;
    for (const auto* c : plain.conv_layers()) expected += c->out_channels();
    EXPECT_EQ(n, expected);
}

TEST(Attach, OutOnlyOnTwoConvChainGivesSumOfChannels) {
    // A [64, 128] conv chain: 64 + 128 scalars.
    ConvLayer<float> a, b;
    a.weight = Tensor<float>::ones({64, 3, 3, 3});
    b.weight = Tensor<float>::ones({128, 64, 3, 3});
    a.attach(AttentionShape::OutOnly, 2.0);
    b.attach(AttentionShape::OutOnly, 2.0);
    EXPECT_EQ(a.attn.numel() + b.attn.numel(), 192);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    auto m = build_model<float>(small_config(), 3);
    attach_attention(m, AttentionShape::InTimesOut);
    std::mt19937_64 rng(1);
    for (auto* c : m.conv_layers())
        for (auto& v : c->attn.mutable_data()) v = std::uniform_real_distribution<float>(0, 2)(rng);
    const auto path = temp_file("roundtrip.atw");
    save_weights(m, path);
    auto n = build_model<float>(small_config(), 99);
    attach_attention(n, AttentionShape::InTimesOut);
    load_weights(n, path);
    EXPECT_EQ(snapshot(m), snapshot(n));
}

TEST(Checkpoint, ByteLengthMatchesTally) {
    auto m = build_model<float>(small_config(), 3);
    attach_attention(m, AttentionShape::OutOnly);
    std::vector<std::pair<std::string, Shape>> entries;
    for (const auto& nt : m.state()) entries.emplace_back(nt.name, nt.tensor.dims());
    EXPECT_EQ(encode_atw1(model_tensors(m)).size(), oracle::atw1_bytes(entries));
}

TEST(Checkpoint, ClassifierMismatchNamesFc) {
    auto ten = build_model<float>(small_config(), 1);
    const auto path = temp_file("ten.atw");
    save_weights(ten, path);
    auto cfg = small_config();
    cfg.num_classes = 144;
    auto big = build_model<float>(cfg, 2);
    try {
        load_weights(big, path);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("fc.weight"), std::string::npos) << e.what();
    }
    const auto fresh_fc = big.fc_weight.values();
    load_weights(big, path, {.skip_classifier = true});
    EXPECT_EQ(big.fc_weight.values(), fresh_fc);
    EXPECT_EQ(big.stem.conv.weight.values(), ten.stem.conv.weight.values());
}

TEST(Checkpoint, DecodeErrors) {
    auto m = build_model<float>(small_config(), 1);
    const auto good = encode_atw1(model_tensors(m));
    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_atw1(bad_magic), DataError);
    auto truncated = good;
    truncated.resize(good.size() / 2);
    EXPECT_THROW(decode_atw1(truncated), DataError);
    auto flipped = good;
    flipped[good.size() / 2] ^= 0x10;
    EXPECT_THROW(decode_atw1(flipped), DataError);

    // Unknown dtype with a consistent checksum.
    std::vector<RawTensor> one{{"x", {2}, {1.f, 2.f}}};
    auto bytes = encode_atw1(one);
    bytes[4 + 4 + 2 + 1] = 7;
    bytes.resize(bytes.size() - 4);
    const auto crc = detail::crc32_of(bytes.data(), bytes.size());
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    try {
        decode_atw1(bytes);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("dtype"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, AttentionTensorsNeedAttachedModel) {
    auto m = build_model<float>(small_config(), 1);
    attach_attention(m, AttentionShape::OutOnly);
    const auto tensors = model_tensors(m);
    EXPECT_EQ(stored_attention_shape(tensors), AttentionShape::OutOnly);
    auto plain = build_model<float>(small_config(), 1);
    EXPECT_THROW(load_tensors(plain, tensors), DataError);
    EXPECT_EQ(stored_attention_shape(model_tensors(plain)), std::nullopt);
}
