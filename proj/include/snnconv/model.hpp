/* Copyright 2026 The snnconv Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "snnconv/tensor.hpp"

namespace snnconv {

struct PatchSpec {
    std::size_t patch_size = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    bool operator==(const PatchSpec&) const = default;
};

/// Shape of a ViT encoder. num_tokens counts the CLS token; the input carries
/// num_tokens - 1 patch rows of width in_dim.
struct ModelConfig {
    std::size_t num_blocks = 1;
    std::size_t dim = 0;
    std::size_t heads = 1;
    std::size_t mlp_dim = 0;
    std::size_t num_tokens = 0;
    std::size_t num_classes = 0;
    std::size_t in_dim = 0;
    std::optional<PatchSpec> patch;
    double ln_eps = 1e-6;

    std::size_t head_dim() const { return dim / heads; }
    std::size_t num_patches() const { return num_tokens - 1; }

    void validate() const {
        if (num_blocks < 1 || dim < 1 || heads < 1 || mlp_dim < 1 || num_classes < 1 || in_dim < 1)
            throw ValidationError("model config: all dimensions must be >= 1");
        if (num_tokens < 2) throw ValidationError("model config: need at least one patch token plus CLS");
        if (dim % heads != 0) throw ValidationError("model config: dim must be divisible by heads");
        if (!(ln_eps > 0)) throw ValidationError("model config: ln_eps must be positive");
        if (patch) {
            const auto& p = *patch;
            if (p.patch_size == 0 || p.height % p.patch_size || p.width % p.patch_size)
                throw ValidationError("model config: image dims must be divisible by patch_size");
            if ((p.height / p.patch_size) * (p.width / p.patch_size) != num_patches())
                throw ValidationError("model config: patch grid does not match num_tokens - 1");
            if (p.patch_size * p.patch_size * p.channels != in_dim)
                throw ValidationError("model config: in_dim must equal patch_size^2 * channels");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

enum class LayerKind {
    embed_linear,
    pos_add,
    layernorm,
    linear,
    matmul,
    softmax,
    gelu,
    residual_add,
    cls_head,
};

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::embed_linear: return "embed_linear";
        case LayerKind::pos_add: return "pos_add";
        case LayerKind::layernorm: return "layernorm";
        case LayerKind::linear: return "linear";
        case LayerKind::matmul: return "matmul";
        case LayerKind::softmax: return "softmax";
        case LayerKind::gelu: return "gelu";
        case LayerKind::residual_add: return "residual_add";
        case LayerKind::cls_head: return "cls_head";
    }
    return "?";
}

// query_key: per head q_h * k_h^T -> [heads, N, N].
// probs_value: per head p_h * v_h -> [N, C], heads concatenated along columns.
enum class MatMulMode { query_key, probs_value };

/// Reference to an activation, optionally restricted to a column block.
struct Operand {
    std::string tensor;
    std::size_t col_begin = 0;
    std::size_t cols = 0;  // 0 selects every column

    bool operator==(const Operand&) const = default;
};

struct LayerSpec {
    LayerKind kind{};
    std::string name;
    std::vector<Operand> inputs;
    std::string output;
    std::string weight;  // linear weight, layernorm gamma, pos table
    std::string bias;    // linear bias, layernorm beta
    std::string extra;   // embed: CLS token
    MatMulMode mode = MatMulMode::query_key;
    double scale = 1.0;  // softmax pre-multiplier
    int block = -1;

    /// Calibration sites owned by this layer: the input of a linear layer or
    /// the two operands of a matrix product.
    std::vector<std::string> sites() const {
        if (kind == LayerKind::linear || kind == LayerKind::embed_linear) return {name};
        if (kind == LayerKind::matmul) return {name + ".a", name + ".b"};
        return {};
    }
};

inline std::string block_prefix(std::size_t b) { return "blocks." + std::to_string(b) + "."; }

/// The fixed ViT layer program for a config.
inline std::vector<LayerSpec> build_layers(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.dim;
    std::vector<LayerSpec> layers;
    auto add = [&](LayerSpec s) { layers.push_back(std::move(s)); };

    add({.kind = LayerKind::embed_linear, .name = "embed", .inputs = {{"tokens"}},
         .output = "embed.out", .weight = "embed.weight", .bias = "embed.bias", .extra = "cls_token"});
    add({.kind = LayerKind::pos_add, .name = "pos_embed", .inputs = {{"embed.out"}}, .output = "x.0",
         .weight = "pos_embed"});

    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string p = block_prefix(b);
        const std::string x = "x." + std::to_string(b);
        const int blk = static_cast<int>(b);
        add({.kind = LayerKind::layernorm, .name = p + "norm1", .inputs = {{x}}, .output = p + "norm1.out",
             .weight = p + "norm1.weight", .bias = p + "norm1.bias", .block = blk});
        add({.kind = LayerKind::linear, .name = p + "attn.qkv", .inputs = {{p + "norm1.out"}},
             .output = p + "attn.qkv.out", .weight = p + "attn.qkv.weight", .bias = p + "attn.qkv.bias",
             .block = blk});
        add({.kind = LayerKind::matmul, .name = p + "attn.qk",
             .inputs = {{p + "attn.qkv.out", 0, c}, {p + "attn.qkv.out", c, c}}, .output = p + "attn.scores",
             .mode = MatMulMode::query_key, .block = blk});
        add({.kind = LayerKind::softmax, .name = p + "attn.softmax", .inputs = {{p + "attn.scores"}},
             .output = p + "attn.probs", .scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim())),
             .block = blk});
        add({.kind = LayerKind::matmul, .name = p + "attn.sv",
             .inputs = {{p + "attn.probs"}, {p + "attn.qkv.out", 2 * c, c}}, .output = p + "attn.ctx",
             .mode = MatMulMode::probs_value, .block = blk});
        add({.kind = LayerKind::linear, .name = p + "attn.proj", .inputs = {{p + "attn.ctx"}},
             .output = p + "attn.proj.out", .weight = p + "attn.proj.weight", .bias = p + "attn.proj.bias",
             .block = blk});
        add({.kind = LayerKind::residual_add, .name = p + "attn.residual",
             .inputs = {{x}, {p + "attn.proj.out"}}, .output = p + "mid", .block = blk});
        add({.kind = LayerKind::layernorm, .name = p + "norm2", .inputs = {{p + "mid"}}, .output = p + "norm2.out",
             .weight = p + "norm2.weight", .bias = p + "norm2.bias", .block = blk});
        add({.kind = LayerKind::linear, .name = p + "mlp.fc1", .inputs = {{p + "norm2.out"}},
             .output = p + "mlp.fc1.out", .weight = p + "mlp.fc1.weight", .bias = p + "mlp.fc1.bias",
             .block = blk});
        add({.kind = LayerKind::gelu, .name = p + "mlp.gelu", .inputs = {{p + "mlp.fc1.out"}},
             .output = p + "mlp.gelu.out", .block = blk});
        add({.kind = LayerKind::linear, .name = p + "mlp.fc2", .inputs = {{p + "mlp.gelu.out"}},
             .output = p + "mlp.fc2.out", .weight = p + "mlp.fc2.weight", .bias = p + "mlp.fc2.bias",
             .block = blk});
        add({.kind = LayerKind::residual_add, .name = p + "mlp.residual",
             .inputs = {{p + "mid"}, {p + "mlp.fc2.out"}}, .output = "x." + std::to_string(b + 1),
             .block = blk});
    }
    add({.kind = LayerKind::cls_head, .name = "head", .inputs = {{"x." + std::to_string(cfg.num_blocks)}},
         .output = "logits", .weight = "head.weight", .bias = "head.bias"});
    return layers;
}

/// Every tensor a model of this config carries, with its shape.
inline std::map<std::string, Shape> expected_weight_shapes(const ModelConfig& cfg) {
    const std::size_t c = cfg.dim, h = cfg.mlp_dim;
    std::map<std::string, Shape> s;
    s["embed.weight"] = {cfg.in_dim, c};
    s["embed.bias"] = {c};
    s["cls_token"] = {c};
    s["pos_embed"] = {cfg.num_tokens, c};
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string p = block_prefix(b);
        s[p + "norm1.weight"] = {c};
        s[p + "norm1.bias"] = {c};
        s[p + "attn.qkv.weight"] = {c, 3 * c};
        s[p + "attn.qkv.bias"] = {3 * c};
        s[p + "attn.proj.weight"] = {c, c};
        s[p + "attn.proj.bias"] = {c};
        s[p + "norm2.weight"] = {c};
        s[p + "norm2.bias"] = {c};
        s[p + "mlp.fc1.weight"] = {c, h};
        s[p + "mlp.fc1.bias"] = {h};
        s[p + "mlp.fc2.weight"] = {h, c};
        s[p + "mlp.fc2.bias"] = {c};
    }
    s["head.weight"] = {c, cfg.num_classes};
    s["head.bias"] = {cfg.num_classes};
    return s;
}

/// Immutable ANN description: config, layer program and named weights.
template <std::floating_point Real>
struct ModelGraph {
    ModelConfig config;
    std::vector<LayerSpec> layers;
    std::map<std::string, Tensor<Real>> weights;

    const Tensor<Real>& weight(const std::string& name) const {
        auto it = weights.find(name);
        if (it == weights.end()) throw ValidationError("model has no tensor '" + name + "'");
        return it->second;
    }

    std::vector<std::string> calibration_sites() const {
        std::vector<std::string> out;
        for (const auto& l : layers)
            for (auto& s : l.sites()) out.push_back(std::move(s));
        return out;
    }

    const LayerSpec& layer(const std::string& name) const {
        for (const auto& l : layers)
            if (l.name == name) return l;
        throw ValidationError("model has no layer '" + name + "'");
    }
};

/// Builds the layer program and checks every tensor against the config.
template <std::floating_point Real>
ModelGraph<Real> make_model(const ModelConfig& cfg, std::map<std::string, Tensor<Real>> weights) {
    ModelGraph<Real> g{cfg, build_layers(cfg), std::move(weights)};
    for (const auto& [name, shape] : expected_weight_shapes(cfg)) {
        auto it = g.weights.find(name);
        if (it == g.weights.end()) throw ValidationError("missing tensor '" + name + "'");
        if (it->second.shape() != shape)
            throw ValidationError("tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                                  ", expected " + shape_str(shape));
        if (!it->second.all_finite()) throw NumericError("tensor '" + name + "' has non-finite values");
    }
    return g;
}

/// Seeded random weights sized like a small pretrained ViT.
template <std::floating_point Real>
ModelGraph<Real> make_toy_model(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::map<std::string, Tensor<Real>> w;
    for (const auto& [name, shape] : expected_weight_shapes(cfg)) {
        Tensor<Real> t(shape);
        double sd = 0.02;
        double mean = 0.0;
        if (shape.size() == 2 && name != "pos_embed") sd = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        if (name == "pos_embed" || name == "cls_token") sd = 0.1;
        if (name.ends_with("norm1.weight") || name.ends_with("norm2.weight")) mean = 1.0, sd = 0.1;
        if (name == "head.weight") sd = 2.0 / std::sqrt(static_cast<double>(shape[0]));
        // f32-representable so archives round-trip the in-memory model exactly.
        for (auto& v : t.values()) v = static_cast<Real>(static_cast<float>(mean + sd * normal(rng)));
        w.emplace(name, std::move(t));
    }
    return make_model(cfg, std::move(w));
}

/// Image [H, W, ch] -> [num_patches, patch^2 * ch], patches in row-major grid
/// order, each flattened as (row, col, channel).
template <std::floating_point Real>
Tensor<Real> patchify(const Tensor<Real>& image, std::size_t patch_size) {
    if (image.rank() != 3) throw DimensionError("patchify expects [H, W, ch], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
    if (patch_size == 0 || h % patch_size || w % patch_size)
        throw DimensionError("patchify: image " + shape_str(image.shape()) + " not divisible by patch " +
                             std::to_string(patch_size));
    const std::size_t gh = h / patch_size, gw = w / patch_size, len = patch_size * patch_size * ch;
    Tensor<Real> out({gh * gw, len});
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px) {
            Real* dst = out.data() + (py * gw + px) * len;
            for (std::size_t y = 0; y < patch_size; ++y) {
                const Real* src = image.data() + ((py * patch_size + y) * w + px * patch_size) * ch;
                dst = std::copy_n(src, patch_size * ch, dst);
            }
        }
    return out;
}

// ---- head-split helpers shared with the SNN runtime ----

/// Columns of head h from an [N, C] tensor.
template <std::floating_point Real>
Tensor<Real> head_cols(const Tensor<Real>& x, std::size_t h, std::size_t head_dim) {
    return slice_cols(x, h * head_dim, head_dim);
}

/// Plane h of a [heads, N, M] tensor as [N, M].
template <std::floating_point Real>
Tensor<Real> head_plane(const Tensor<Real>& x, std::size_t h) {
    const std::size_t n = x.dim(1), m = x.dim(2);
    std::vector<Real> v(x.data() + h * n * m, x.data() + (h + 1) * n * m);
    return Tensor<Real>({n, m}, std::move(v));
}

template <std::floating_point Real>
void set_head_plane(Tensor<Real>& x, std::size_t h, const Tensor<Real>& plane) {
    std::copy(plane.vec().begin(), plane.vec().end(), x.data() + h * plane.size());
}

template <std::floating_point Real>
Tensor<Real> linear_forward(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
    Tensor<Real> y = matmul(x, w);
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t j = 0; j < y.cols(); ++j) y.at(r, j) += b[j];
    return y;
}

template <std::floating_point Real>
Tensor<Real> fetch_operand(const std::map<std::string, Tensor<Real>>& acts, const Operand& op) {
    auto it = acts.find(op.tensor);
    if (it == acts.end()) throw StateError("activation '" + op.tensor + "' not produced yet");
    if (op.cols == 0) return it->second;
    return slice_cols(it->second, op.col_begin, op.cols);
}

template <std::floating_point Real>
struct AnnOutput {
    Tensor<Real> logits;
    std::map<std::string, Tensor<Real>> taps;  // site id -> tapped tensor
};

/// Exact ANN forward pass. tokens is [num_tokens - 1, in_dim].
template <std::floating_point Real>
AnnOutput<Real> ann_forward(const ModelGraph<Real>& model, const Tensor<Real>& tokens, bool taps = false) {
    const auto& cfg = model.config;
    if (tokens.rank() != 2 || tokens.dim(0) != cfg.num_patches() || tokens.dim(1) != cfg.in_dim)
        throw DimensionError("ann_forward: tokens " + shape_str(tokens.shape()) + ", expected [" +
                             std::to_string(cfg.num_patches()) + "," + std::to_string(cfg.in_dim) + "]");
    const std::size_t d = cfg.head_dim();
    std::map<std::string, Tensor<Real>> acts;
    acts.emplace("tokens", tokens);
    AnnOutput<Real> out;

    for (const auto& l : model.layers) {
        std::vector<Tensor<Real>> in;
        for (const auto& op : l.inputs) in.push_back(fetch_operand(acts, op));
        if (taps)
            for (std::size_t i = 0; const auto& site : l.sites()) out.taps.insert_or_assign(site, in[i++]);

        Tensor<Real> y;
        switch (l.kind) {
            case LayerKind::embed_linear: {
                const auto patches = linear_forward(in[0], model.weight(l.weight), model.weight(l.bias));
                y = Tensor<Real>({cfg.num_tokens, cfg.dim});
                const auto& cls = model.weight(l.extra);
                std::copy(cls.vec().begin(), cls.vec().end(), y.data());
                std::copy(patches.vec().begin(), patches.vec().end(), y.data() + cfg.dim);
                break;
            }
            case LayerKind::pos_add: y = in[0] + model.weight(l.weight); break;
            case LayerKind::layernorm:
                y = layernorm(in[0], model.weight(l.weight), model.weight(l.bias), static_cast<Real>(cfg.ln_eps));
                break;
            case LayerKind::linear: y = linear_forward(in[0], model.weight(l.weight), model.weight(l.bias)); break;
            case LayerKind::matmul:
                if (l.mode == MatMulMode::query_key) {
                    y = Tensor<Real>({cfg.heads, cfg.num_tokens, cfg.num_tokens});
                    for (std::size_t h = 0; h < cfg.heads; ++h)
                        set_head_plane(y, h, matmul(head_cols(in[0], h, d), transpose(head_cols(in[1], h, d))));
                } else {
                    y = Tensor<Real>({cfg.num_tokens, cfg.dim});
                    for (std::size_t h = 0; h < cfg.heads; ++h)
                        assign_cols(y, h * d, matmul(head_plane(in[0], h), head_cols(in[1], h, d)));
                }
                break;
            case LayerKind::softmax: y = softmax_rows(in[0], static_cast<Real>(l.scale)); break;
            case LayerKind::gelu: y = gelu(in[0]); break;
            case LayerKind::residual_add: y = in[0] + in[1]; break;
            case LayerKind::cls_head: {
                Tensor<Real> cls({1, cfg.dim});
                std::copy(in[0].row(0).begin(), in[0].row(0).end(), cls.data());
                y = linear_forward(cls, model.weight(l.weight), model.weight(l.bias)).reshaped({cfg.num_classes});
                break;
            }
        }
        acts.insert_or_assign(l.output, std::move(y));
    }
    out.logits = acts.at("logits");
    return out;
}

template <std::floating_point Real>
std::size_t argmax(std::span<const Real> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace snnconv
