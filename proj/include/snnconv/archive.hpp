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

// Directory archives: manifest.json + weights.bin for models, data.json +
// data.bin for datasets. Binary payloads are little-endian IEEE-754 f32.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "snnconv/model.hpp"

namespace snnconv {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline void append_f32(std::string& buf, float f) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
    char raw[4];
    std::memcpy(raw, &bits, 4);
    buf.append(raw, 4);
}

inline float read_f32(const char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    return std::bit_cast<float>(to_le(bits));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

inline json parse_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace detail

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    detail::write_file(path, j.dump(2) + "\n");
}

inline json read_json_file(const std::filesystem::path& path) { return detail::parse_json_file(path); }

inline json config_to_json(const ModelConfig& c) {
    json j{{"num_blocks", c.num_blocks}, {"dim", c.dim},         {"heads", c.heads},
           {"mlp_dim", c.mlp_dim},       {"num_tokens", c.num_tokens}, {"num_classes", c.num_classes},
           {"in_dim", c.in_dim},         {"ln_eps", c.ln_eps}};
    if (c.patch)
        j["patch"] = {{"patch_size", c.patch->patch_size},
                      {"height", c.patch->height},
                      {"width", c.patch->width},
                      {"channels", c.patch->channels}};
    return j;
}

inline ModelConfig config_from_json(const json& j) {
    try {
        ModelConfig c;
        c.num_blocks = j.at("num_blocks").get<std::size_t>();
        c.dim = j.at("dim").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.mlp_dim = j.at("mlp_dim").get<std::size_t>();
        c.num_tokens = j.at("num_tokens").get<std::size_t>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.in_dim = j.at("in_dim").get<std::size_t>();
        c.ln_eps = j.value("ln_eps", 1e-6);
        if (j.contains("patch")) {
            const auto& p = j["patch"];
            c.patch = PatchSpec{p.at("patch_size").get<std::size_t>(), p.at("height").get<std::size_t>(),
                                p.at("width").get<std::size_t>(), p.at("channels").get<std::size_t>()};
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
}

/// Raw archive contents: the manifest plus every f32 tensor it indexes.
struct RawArchive {
    json manifest;
    std::map<std::string, Tensor<float>> tensors;
};

/// Writes manifest.json and weights.bin. Tensors are laid out in name order.
inline void write_archive(const std::filesystem::path& dir, const json& config,
                          const std::map<std::string, Tensor<float>>& tensors) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::string blob;
    json index = json::array();
    for (const auto& [name, t] : tensors) {
        const std::size_t offset = blob.size();
        for (float v : t.values()) detail::append_f32(blob, v);
        index.push_back({{"name", name},
                         {"shape", t.shape()},
                         {"dtype", "f32"},
                         {"byte_offset", offset},
                         {"byte_len", blob.size() - offset}});
    }
    json manifest{{"format_version", kFormatVersion}, {"config", config}, {"tensors", index}};
    write_json_file(dir / "manifest.json", manifest);
    detail::write_file(dir / "weights.bin", blob);
}

inline RawArchive read_archive(const std::filesystem::path& dir) {
    RawArchive ar;
    ar.manifest = detail::parse_json_file(dir / "manifest.json");
    const std::string blob = detail::read_file(dir / "weights.bin");
    try {
        if (ar.manifest.at("format_version").get<int>() != kFormatVersion)
            throw FormatError("unsupported archive format_version");
        std::size_t expected_offset = 0;
        for (const auto& e : ar.manifest.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const auto shape = e.at("shape").get<Shape>();
            const auto offset = e.at("byte_offset").get<std::size_t>();
            const auto len = e.at("byte_len").get<std::size_t>();
            if (e.at("dtype").get<std::string>() != "f32")
                throw FormatError("tensor '" + name + "': only f32 is supported");
            if (shape.empty() || len != 4 * shape_size(shape))
                throw FormatError("tensor '" + name + "': shape " + shape_str(shape) + " needs " +
                                  std::to_string(4 * shape_size(shape)) + " bytes, manifest says " +
                                  std::to_string(len));
            if (offset != expected_offset)
                throw FormatError("tensor '" + name + "': byte_offset " + std::to_string(offset) +
                                  " breaks contiguous layout (expected " + std::to_string(expected_offset) + ")");
            if (offset + len > blob.size())
                throw FormatError("tensor '" + name + "' runs past the end of weights.bin");
            std::vector<float> v(shape_size(shape));
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = detail::read_f32(blob.data() + offset + 4 * i);
            if (!ar.tensors.emplace(name, Tensor<float>::from_external(shape, std::move(v))).second)
                throw FormatError("duplicate tensor '" + name + "'");
            expected_offset = offset + len;
        }
        if (expected_offset != blob.size())
            throw FormatError("weights.bin has " + std::to_string(blob.size() - expected_offset) +
                              " trailing bytes not covered by the manifest");
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    return ar;
}

template <std::floating_point Real>
std::map<std::string, Tensor<float>> model_tensors_f32(const ModelGraph<Real>& model) {
    std::map<std::string, Tensor<float>> out;
    for (const auto& [name, t] : model.weights) out.emplace(name, tensor_cast<float>(t));
    return out;
}

template <std::floating_point Real>
void save_model(const ModelGraph<Real>& model, const std::filesystem::path& dir) {
    write_archive(dir, config_to_json(model.config), model_tensors_f32(model));
}

/// Builds a model from a raw archive, ignoring tensors the config does not name.
template <std::floating_point Real>
ModelGraph<Real> model_from_archive(const RawArchive& ar) {
    const ModelConfig cfg = config_from_json(ar.manifest.at("config"));
    std::map<std::string, Tensor<Real>> w;
    for (const auto& [name, shape] : expected_weight_shapes(cfg)) {
        auto it = ar.tensors.find(name);
        if (it == ar.tensors.end()) throw ValidationError("archive is missing tensor '" + name + "'");
        w.emplace(name, tensor_cast<Real>(it->second));
    }
    return make_model(cfg, std::move(w));
}

template <std::floating_point Real>
ModelGraph<Real> load_model(const std::filesystem::path& dir) {
    return model_from_archive<Real>(read_archive(dir));
}

/// Pre-embedded samples: each sample is [tokens_per_sample, dim].
template <std::floating_point Real>
struct Dataset {
    std::size_t tokens_per_sample = 0;
    std::size_t dim = 0;
    std::vector<Tensor<Real>> samples;
    std::vector<int> labels;

    std::size_t size() const { return samples.size(); }
};

template <std::floating_point Real>
void save_dataset(const Dataset<Real>& ds, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::string blob;
    for (const auto& s : ds.samples)
        for (Real v : s.values()) detail::append_f32(blob, static_cast<float>(v));
    json meta{{"format_version", kFormatVersion},
              {"count", ds.samples.size()},
              {"tokens_per_sample", ds.tokens_per_sample},
              {"dim", ds.dim},
              {"labels", ds.labels}};
    write_json_file(dir / "data.json", meta);
    detail::write_file(dir / "data.bin", blob);
}

template <std::floating_point Real>
Dataset<Real> load_dataset(const std::filesystem::path& dir) {
    const json meta = detail::parse_json_file(dir / "data.json");
    const std::string blob = detail::read_file(dir / "data.bin");
    Dataset<Real> ds;
    try {
        const auto count = meta.at("count").get<std::size_t>();
        ds.tokens_per_sample = meta.at("tokens_per_sample").get<std::size_t>();
        ds.dim = meta.at("dim").get<std::size_t>();
        ds.labels = meta.at("labels").get<std::vector<int>>();
        const std::size_t per = ds.tokens_per_sample * ds.dim;
        if (ds.labels.size() != count) throw FormatError("data.json: labels length differs from count");
        if (blob.size() != 4 * per * count)
            throw FormatError("data.bin holds " + std::to_string(blob.size()) + " bytes, expected " +
                              std::to_string(4 * per * count));
        for (std::size_t s = 0; s < count; ++s) {
            std::vector<Real> v(per);
            for (std::size_t i = 0; i < per; ++i) v[i] = detail::read_f32(blob.data() + 4 * (s * per + i));
            ds.samples.push_back(Tensor<Real>::from_external({ds.tokens_per_sample, ds.dim}, std::move(v)));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("data.json: ") + e.what());
    }
    return ds;
}

/// Gaussian token samples labelled with the ANN's own prediction, so SNN
/// accuracy doubles as agreement with the oracle.
template <std::floating_point Real>
Dataset<Real> make_toy_dataset(const ModelGraph<Real>& model, std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset<Real> ds;
    ds.tokens_per_sample = model.config.num_patches();
    ds.dim = model.config.in_dim;
    for (std::size_t s = 0; s < count; ++s) {
        Tensor<Real> t({ds.tokens_per_sample, ds.dim});
        // Round through f32 so the in-memory set matches what data.bin stores.
        for (auto& v : t.values()) v = static_cast<Real>(static_cast<float>(normal(rng)));
        const auto out = ann_forward(model, t);
        ds.labels.push_back(static_cast<int>(argmax<Real>(out.logits.values())));
        ds.samples.push_back(std::move(t));
    }
    return ds;
}

}  // namespace snnconv
