#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "snnconv/archive.hpp"

using namespace snnconv;
namespace fs = std::filesystem;

namespace {

ModelConfig toy(std::size_t blocks = 2) {
    return ModelConfig{.num_blocks = blocks, .dim = 32, .heads = 4, .mlp_dim = 64, .num_tokens = 17,
                       .num_classes = 10, .in_dim = 16, .patch = PatchSpec{4, 16, 16, 1}};
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("snnconv_model_test_" + name);
    fs::remove_all(p);
    return p;
}

using Mat = std::vector<std::vector<double>>;

Mat mm(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j)
            for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Mat add_bias(Mat x, const std::vector<double>& b) {
    for (auto& r : x)
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
    return x;
}

Mat to_mat(const Tensor<double>& t) {
    Mat m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
    return m;
}

}  // namespace

TEST(Model, ConfigValidation) {
    auto c = toy();
    c.heads = 5;
    EXPECT_THROW(c.validate(), ValidationError);
    c = toy();
    c.patch->patch_size = 3;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Model, BlockLayerSequence) {
    const auto layers = build_layers(toy(1));
    std::vector<LayerKind> kinds;
    for (const auto& l : layers) kinds.push_back(l.kind);
    const std::vector<LayerKind> expected{
        LayerKind::embed_linear, LayerKind::pos_add,      LayerKind::layernorm, LayerKind::linear,
        LayerKind::matmul,       LayerKind::softmax,      LayerKind::matmul,    LayerKind::linear,
        LayerKind::residual_add, LayerKind::layernorm,    LayerKind::linear,    LayerKind::gelu,
        LayerKind::linear,       LayerKind::residual_add, LayerKind::cls_head};
    EXPECT_EQ(kinds, expected);
}

TEST(Model, ToyArchiveRoundTrip) {
    const auto dir = scratch("roundtrip");
    const auto m = make_toy_model<float>(toy(), 3);
    save_model(m, dir);
    const auto back = load_model<float>(dir);
    EXPECT_EQ(back.config, m.config);
    EXPECT_EQ(back.config.num_blocks, 2u);
    ASSERT_EQ(back.weights.size(), m.weights.size());
    for (const auto& [name, t] : m.weights) {
        const auto& u = back.weight(name);
        ASSERT_EQ(u.shape(), t.shape());
        EXPECT_EQ(std::memcmp(u.data(), t.data(), t.size() * sizeof(float)), 0) << name;
    }
    fs::remove_all(dir);
}

TEST(Model, BlobSizeMismatchIsFormatError) {
    const auto dir = scratch("mismatch");
    write_archive(dir, config_to_json(toy()), {{"w", Tensor<float>({100})}});
    auto manifest = read_json_file(dir / "manifest.json");
    manifest["tensors"][0]["shape"] = {32, 32};
    write_json_file(dir / "manifest.json", manifest);
    EXPECT_THROW(read_archive(dir), FormatError);
    fs::remove_all(dir);
}

TEST(Model, WrongShapeIsValidationError) {
    const auto m = make_toy_model<double>(toy(1), 1);
    auto w = m.weights;
    w["blocks.0.mlp.fc1.weight"] = Tensor<double>({32, 63});
    try {
        make_model(m.config, w);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("blocks.0.mlp.fc1.weight"), std::string::npos);
    }
}

TEST(Model, MissingArchiveIsIoError) { EXPECT_THROW(read_archive(scratch("absent")), IoError); }

TEST(Model, ZeroNetworkGivesZeroLogits) {
    auto m = make_toy_model<double>(toy(), 1);
    for (auto& [name, t] : m.weights) t.fill(0.0);
    std::mt19937_64 rng(1);
    Tensor<double> x({16, 16});
    for (auto& v : x.values()) v = std::normal_distribution<double>()(rng);
    const auto logits = ann_forward(m, x).logits;
    for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, HandEvaluatedTinyModel) {
    const ModelConfig cfg{.num_blocks = 1, .dim = 2, .heads = 1, .mlp_dim = 2, .num_tokens = 3,
                          .num_classes = 2, .in_dim = 2};
    std::map<std::string, Tensor<double>> w{
        {"embed.weight", Tensor<double>({2, 2}, {1.0, 0.5, -0.5, 1.0})},
        {"embed.bias", Tensor<double>({2}, {0.1, -0.1})},
        {"cls_token", Tensor<double>({2}, {0.3, -0.2})},
        {"pos_embed", Tensor<double>({3, 2}, {0.0, 0.1, 0.2, 0.0, -0.1, 0.3})},
        {"blocks.0.norm1.weight", Tensor<double>({2}, {1.0, 0.8})},
        {"blocks.0.norm1.bias", Tensor<double>({2}, {0.0, 0.1})},
        {"blocks.0.attn.qkv.weight", Tensor<double>({2, 6}, {0.5, -0.3, 0.2, 0.7, 1.0, 0.0,  //
                                                             0.1, 0.4, -0.6, 0.3, 0.0, 1.0})},
        {"blocks.0.attn.qkv.bias", Tensor<double>({6}, {0.0, 0.1, 0.0, -0.1, 0.05, 0.0})},
        {"blocks.0.attn.proj.weight", Tensor<double>({2, 2}, {0.9, 0.1, -0.2, 0.8})},
        {"blocks.0.attn.proj.bias", Tensor<double>({2}, {0.0, 0.02})},
        {"blocks.0.norm2.weight", Tensor<double>({2}, {1.1, 0.9})},
        {"blocks.0.norm2.bias", Tensor<double>({2}, {-0.05, 0.0})},
        {"blocks.0.mlp.fc1.weight", Tensor<double>({2, 2}, {1.0, -1.0, 0.5, 0.5})},
        {"blocks.0.mlp.fc1.bias", Tensor<double>({2}, {0.1, 0.0})},
        {"blocks.0.mlp.fc2.weight", Tensor<double>({2, 2}, {0.7, 0.0, -0.3, 0.6})},
        {"blocks.0.mlp.fc2.bias", Tensor<double>({2}, {0.0, -0.1})},
        {"head.weight", Tensor<double>({2, 2}, {1.0, -1.0, 2.0, 0.5})},
        {"head.bias", Tensor<double>({2}, {0.25, -0.25})},
    };
    const auto model = make_model(cfg, w);
    const Tensor<double> tokens({2, 2}, {1.0, -2.0, 0.5, 0.25});

    // Step-by-step evaluation with plain nested vectors.
    Mat patches = add_bias(mm(to_mat(tokens), to_mat(w["embed.weight"])), w["embed.bias"].vec());
    Mat x{{0.3, -0.2}, patches[0], patches[1]};
    const Mat pos = to_mat(w["pos_embed"]);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) x[i][j] += pos[i][j];
    auto ln = [](const Mat& in, const std::vector<double>& g, const std::vector<double>& b) {
        Mat out = in;
        for (auto& r : out) {
            const double mu = (r[0] + r[1]) / 2, var = ((r[0] - mu) * (r[0] - mu) + (r[1] - mu) * (r[1] - mu)) / 2;
            for (int j = 0; j < 2; ++j) r[j] = (r[j] - mu) / std::sqrt(var + 1e-6) * g[j] + b[j];
        }
        return out;
    };
    const Mat qkv = add_bias(mm(ln(x, w["blocks.0.norm1.weight"].vec(), w["blocks.0.norm1.bias"].vec()),
                                to_mat(w["blocks.0.attn.qkv.weight"])),
                             w["blocks.0.attn.qkv.bias"].vec());
    Mat ctx(3, std::vector<double>(2, 0.0));
    for (int i = 0; i < 3; ++i) {
        double s[3], z = 0;
        for (int j = 0; j < 3; ++j) {
            s[j] = std::exp((qkv[i][0] * qkv[j][2] + qkv[i][1] * qkv[j][3]) / std::sqrt(2.0));
            z += s[j];
        }
        for (int j = 0; j < 3; ++j)
            for (int c = 0; c < 2; ++c) ctx[i][c] += s[j] / z * qkv[j][4 + c];
    }
    const Mat proj = add_bias(mm(ctx, to_mat(w["blocks.0.attn.proj.weight"])), w["blocks.0.attn.proj.bias"].vec());
    Mat mid = x;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) mid[i][j] += proj[i][j];
    Mat h = add_bias(mm(ln(mid, w["blocks.0.norm2.weight"].vec(), w["blocks.0.norm2.bias"].vec()),
                        to_mat(w["blocks.0.mlp.fc1.weight"])),
                     w["blocks.0.mlp.fc1.bias"].vec());
    for (auto& r : h)
        for (auto& v : r) v = 0.5 * v * (1 + std::erf(v / std::sqrt(2.0)));
    const Mat f2 = add_bias(mm(h, to_mat(w["blocks.0.mlp.fc2.weight"])), w["blocks.0.mlp.fc2.bias"].vec());
    const Mat cls{{mid[0][0] + f2[0][0], mid[0][1] + f2[0][1]}};
    const Mat logits = add_bias(mm(cls, to_mat(w["head.weight"])), w["head.bias"].vec());

    const auto out = ann_forward(model, tokens);
    ASSERT_EQ(out.logits.shape(), (Shape{2}));
    EXPECT_NEAR(out.logits[0], logits[0][0], 1e-9);
    EXPECT_NEAR(out.logits[1], logits[0][1], 1e-9);
}

TEST(Model, ForwardIsDeterministicAndTapsAreSideEffectFree) {
    const auto m = make_toy_model<double>(toy(), 9);
    const auto ds = make_toy_dataset(m, 1, 4);
    const auto a = ann_forward(m, ds.samples[0]);
    const auto b = ann_forward(m, ds.samples[0], true);
    EXPECT_EQ(a.logits, b.logits);
    EXPECT_EQ(a.logits, ann_forward(m, ds.samples[0]).logits);
    EXPECT_TRUE(a.taps.empty());
}

TEST(Model, TapCountMatchesSites) {
    const auto m = make_toy_model<double>(toy(), 9);
    std::size_t linears = 0, matmuls = 0;
    for (const auto& l : m.layers) {
        linears += l.kind == LayerKind::linear || l.kind == LayerKind::embed_linear;
        matmuls += l.kind == LayerKind::matmul;
    }
    const auto out = ann_forward(m, make_toy_dataset(m, 1, 2).samples[0], true);
    EXPECT_EQ(out.taps.size(), linears + 2 * matmuls);
    EXPECT_EQ(out.taps.size(), m.calibration_sites().size());
}

TEST(Model, InputShapeMismatch) {
    const auto m = make_toy_model<double>(toy(), 9);
    EXPECT_THROW(ann_forward(m, Tensor<double>({15, 16})), DimensionError);
}

TEST(Model, DatasetRoundTrip) {
    const auto dir = scratch("dataset");
    const auto m = make_toy_model<double>(toy(), 2);
    const auto ds = make_toy_dataset(m, 5, 8);
    save_dataset(ds, dir);
    const auto back = load_dataset<double>(dir);
    EXPECT_EQ(back.labels, ds.labels);
    ASSERT_EQ(back.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back.samples[i], ds.samples[i]);
    fs::remove_all(dir);
}

TEST(Patchify, CountsPatches) {
    Tensor<double> img({4, 4, 1});
    const auto p = patchify(img, 2);
    EXPECT_EQ(p.shape(), (Shape{4, 4}));
}

TEST(Patchify, WholeImagePatch) {
    Tensor<double> img({3, 3, 2});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
    const auto p = patchify(img, 3);
    ASSERT_EQ(p.shape(), (Shape{1, 18}));
    EXPECT_EQ(p.vec(), img.vec());
}

TEST(Patchify, MatchesIndexOracle) {
    std::mt19937_64 rng(1);
    Tensor<double> img({8, 8, 3});
    for (auto& v : img.values()) v = std::normal_distribution<double>()(rng);
    const auto p = patchify(img, 4);
    ASSERT_EQ(p.shape(), (Shape{4, 48}));
    for (std::size_t gy = 0; gy < 2; ++gy)
        for (std::size_t gx = 0; gx < 2; ++gx)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 4; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        EXPECT_EQ(p.at(gy * 2 + gx, (y * 4 + x) * 3 + c),
                                  img[((gy * 4 + y) * 8 + gx * 4 + x) * 3 + c]);
}

TEST(Patchify, IndivisibleDims) { EXPECT_THROW(patchify(Tensor<double>({5, 4, 1}), 2), DimensionError); }
