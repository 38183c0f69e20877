#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "snnconv/convert.hpp"

using namespace snnconv;
namespace fs = std::filesystem;

namespace {

ModelConfig toy(std::size_t blocks) {
    return ModelConfig{.num_blocks = blocks, .dim = 32, .heads = 4, .mlp_dim = 64, .num_tokens = 17,
                       .num_classes = 10, .in_dim = 16, .patch = PatchSpec{4, 16, 16, 1}};
}

struct Fixture {
    ModelGraph<double> model;
    ThresholdSet ts;
};

Fixture fixture(std::size_t blocks, int n = 8) {
    auto m = make_toy_model<double>(toy(blocks), 21);
    auto ts = derive_thresholds(collect_stats(m, make_toy_dataset(m, 4, 22), 4), 99, n, default_overrides(m.config));
    return {std::move(m), std::move(ts)};
}

Tensor<double> randn(std::mt19937_64& rng, Shape s) {
    std::normal_distribution<double> d;
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = d(rng);
    return t;
}

}  // namespace

TEST(Convert, OneBlockStructure) {
    const auto f = fixture(1);
    const auto g = convert(f.model, f.ts);
    std::map<SnnKind, int> count;
    for (const auto& l : g.layers) ++count[l.kind];
    EXPECT_EQ(count[SnnKind::mt_neuron], 4 + 1 + 4);
    EXPECT_EQ(count[SnnKind::spike_linear], 5);
    EXPECT_EQ(count[SnnKind::matmul_ec], 2);
    EXPECT_EQ(count[SnnKind::ec], 4);
    EXPECT_EQ(count[SnnKind::analog_head], 1);
    for (std::string s : {"blocks.0.attn.qkv", "blocks.0.attn.proj", "blocks.0.mlp.fc1", "blocks.0.mlp.fc2", "embed",
                          "blocks.0.attn.qk.a", "blocks.0.attn.qk.b", "blocks.0.attn.sv.a", "blocks.0.attn.sv.b"})
        EXPECT_TRUE(g.neurons.contains(s)) << s;
}

TEST(Convert, DeterministicSerialization) {
    const auto f = fixture(1);
    EXPECT_EQ(snn_to_json(convert(f.model, f.ts)).dump(), snn_to_json(convert(f.model, f.ts)).dump());
}

TEST(Convert, InvariantCheckerAcceptsGeneratedGraphs) {
    for (std::size_t b : {1u, 2u, 3u}) {
        const auto f = fixture(b);
        const auto g = convert(f.model, f.ts);
        EXPECT_TRUE(validate_snn(g).empty()) << b << " blocks";
        auto broken = g;
        broken.layers.erase(std::find_if(broken.layers.begin(), broken.layers.end(),
                                         [](const auto& l) { return l.kind == SnnKind::ec; }));
        EXPECT_FALSE(validate_snn(broken).empty());
    }
}

TEST(Convert, MissingSiteNamed) {
    auto f = fixture(1);
    f.ts.sites.erase("blocks.0.mlp.fc1");
    try {
        convert(f.model, f.ts);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("blocks.0.mlp.fc1"), std::string::npos);
    }
}

TEST(Convert, QkvColumnsScaledByConsumerThreshold) {
    const auto f = fixture(1);
    const auto g = convert(f.model, f.ts);
    const auto& nw = g.linears.at("blocks.0.attn.qkv");
    EXPECT_EQ(nw.out_scale[0], f.ts.at("blocks.0.attn.qk.a").theta1);
    EXPECT_EQ(nw.out_scale[32], f.ts.at("blocks.0.attn.qk.b").theta1);
    EXPECT_EQ(nw.out_scale[64], f.ts.at("blocks.0.attn.sv.b").theta1);
    EXPECT_TRUE(g.neurons.at("blocks.0.attn.qk.a").normalized);
    EXPECT_FALSE(g.neurons.at("blocks.0.attn.sv.a").normalized);  // fed by softmax
    EXPECT_EQ(g.linears.at("blocks.0.attn.proj").out_scale[0], 1.0);  // feeds a residual add
}

TEST(Normalize, IntegerLadder) {
    std::mt19937_64 rng(1);
    const auto w = randn(rng, {3, 2});
    const auto nw = normalize_weights(w, Tensor<double>({2}), build_ladder(1.0, 1.0, 2), 1.0);
    ASSERT_EQ(nw.banks.size(), 4u);
    EXPECT_EQ(nw.banks[0], w);
    EXPECT_EQ(nw.banks[1], w * 2.0);
    EXPECT_EQ(nw.banks[2], w * -1.0);
    EXPECT_EQ(nw.banks[3], w * -2.0);
}

TEST(Normalize, OverrideLadder) {
    std::mt19937_64 rng(2);
    const auto w = randn(rng, {3, 2});
    const auto nw = normalize_weights(w, Tensor<double>({2}, {1.0, -0.5}), build_ladder(0.5, 0.08, 1), 0.5);
    ASSERT_EQ(nw.banks.size(), 2u);
    EXPECT_LE(max_abs_diff(nw.banks[0], w), 1e-15);
    EXPECT_LE(max_abs_diff(nw.banks[1], w * -0.16), 1e-15);
    EXPECT_EQ(nw.bias[0], 2.0);
}

TEST(Normalize, RejectsZeroThreshold) {
    EXPECT_THROW(normalize_weights(Tensor<double>({2, 2}), Tensor<double>({2}), build_ladder(1.0, 1.0, 1), 0.0),
                 DomainError);
}

TEST(Normalize, AlgebraicIdentity) {
    std::mt19937_64 rng(3);
    const auto w = randn(rng, {4, 3});
    const auto prev = build_ladder(0.3, 0.9, 3);
    const double lam1 = 0.7;
    const auto nw = normalize_weights(w, randn(rng, {3}), prev, lam1);
    for (std::size_t p = 0; p < prev.channels(); ++p)
        EXPECT_LE(max_abs_diff(nw.banks[p] * lam1, w * prev.lambda[p]), 1e-14);
}

TEST(SpikeLinear, SilentGivesBias) {
    const auto nw = normalize_weights(Tensor<double>({3, 2}, 1.0), Tensor<double>({2}, {1.0, 2.0}),
                                      build_ladder(1.0, 1.0, 2), 2.0);
    std::uint64_t acs = 0;
    const auto y = spike_linear(nw, SpikeMap({1, 3}), &acs);
    EXPECT_EQ(y.vec(), (std::vector<double>{0.5, 1.0}));
    EXPECT_EQ(acs, 2u);
}

TEST(SpikeLinear, OneHotSelectsBankRow) {
    std::mt19937_64 rng(4);
    const auto nw = normalize_weights(randn(rng, {3, 2}), randn(rng, {2}), build_ladder(0.5, 0.4, 2), 0.8);
    SpikeMap s({1, 3});
    s.index[1] = 3;
    const auto y = spike_linear(nw, s);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(y[j], nw.banks[2].at(1, j) + nw.bias[j]);
}

TEST(SpikeLinear, MatchesDenseOracle) {
    std::mt19937_64 rng(5);
    const auto w = randn(rng, {6, 4});
    const auto b = randn(rng, {4});
    const auto prev = build_ladder(0.6, 0.3, 3);
    const double lam1 = 1.7;
    const auto nw = normalize_weights(w, b, prev, lam1);
    SpikeMap s({5, 6});
    std::uniform_int_distribution<int> idx(0, 6);
    for (auto& i : s.index) i = static_cast<SpikeIndex>(idx(rng));
    std::uint64_t acs = 0;
    const auto y = spike_linear(nw, s, &acs);
    const auto x = spikes_to_values(s, prev);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t j = 0; j < 4; ++j) {
            double v = b[j];
            for (std::size_t i = 0; i < 6; ++i) v += w.at(i, j) * x.at(r, i);
            EXPECT_NEAR(y.at(r, j), v / lam1, 1e-12);
        }
    EXPECT_EQ(acs, (s.fired() + 5) * 4);
}

TEST(SnnArchive, SaveLoadRoundTrip) {
    const auto dir = fs::temp_directory_path() / "snnconv_convert_test_archive";
    fs::remove_all(dir);
    const auto f = fixture(1, 4);
    const auto g = convert(f.model, f.ts);
    save_snn(g, dir);
    const auto back = load_snn<double>(dir);
    EXPECT_EQ(snn_to_json(back).dump(), snn_to_json(g).dump());
    EXPECT_TRUE(validate_snn(back).empty());
    fs::remove_all(dir);
}
