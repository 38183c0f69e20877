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

// ANN -> SNN rewrite. A multi-threshold neuron is placed before every linear
// layer except the classification head; each matrix product becomes two
// neurons feeding a matrix-product EC module; layernorm, softmax and GELU
// become general EC modules. Linear weights are expanded into one bank per
// upstream threshold channel so spike-driven layers only accumulate.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "snnconv/calibrate.hpp"
#include "snnconv/ec.hpp"
#include "snnconv/energy.hpp"

namespace snnconv {

/// Weight banks W_p = W * lambda_prev[p] / lambda1 (per output column), and
/// the bias divided the same way.
template <std::floating_point Real>
struct NormalizedWeights {
    std::vector<Tensor<Real>> banks;  // one [in, out] bank per upstream channel
    Tensor<Real> bias;                // [out]
    std::vector<Real> out_scale;      // lambda1 of the consumer of each output column (1 if analog)

    std::size_t in_dim() const { return banks.front().dim(0); }
    std::size_t out_dim() const { return banks.front().dim(1); }
};

template <std::floating_point Real>
NormalizedWeights<Real> normalize_weights(const Tensor<Real>& w, const Tensor<Real>& bias,
                                          const ThresholdLadder<Real>& prev, std::vector<Real> out_scale) {
    if (w.rank() != 2 || bias.size() != w.dim(1) || out_scale.size() != w.dim(1))
        throw DimensionError("normalize_weights: weight " + shape_str(w.shape()) + ", bias " +
                             shape_str(bias.shape()) + ", " + std::to_string(out_scale.size()) + " column scales");
    for (Real s : out_scale)
        if (!(s > 0)) throw DomainError("normalize_weights: downstream base threshold must be positive");
    NormalizedWeights<Real> nw;
    nw.out_scale = std::move(out_scale);
    const std::size_t out = w.dim(1);
    for (Real lam : prev.lambda) {
        Tensor<Real> bank = w;
        for (std::size_t i = 0; i < bank.rows(); ++i)
            for (std::size_t j = 0; j < out; ++j) bank.at(i, j) = w.at(i, j) * lam / nw.out_scale[j];
        nw.banks.push_back(std::move(bank));
    }
    nw.bias = bias;
    for (std::size_t j = 0; j < out; ++j) nw.bias[j] = bias[j] / nw.out_scale[j];
    return nw;
}

template <std::floating_point Real>
NormalizedWeights<Real> normalize_weights(const Tensor<Real>& w, const Tensor<Real>& bias,
                                          const ThresholdLadder<Real>& prev, Real lambda1_this) {
    if (!(lambda1_this > 0)) throw DomainError("normalize_weights: lambda1 must be positive");
    return normalize_weights(w, bias, prev, std::vector<Real>(w.rank() == 2 ? w.dim(1) : 0, lambda1_this));
}

/// Accumulates, for every fired input, the matching bank row. No
/// multiplications; `acs` receives the number of additions performed.
template <std::floating_point Real>
Tensor<Real> spike_linear(const NormalizedWeights<Real>& nw, const SpikeMap& spikes, std::uint64_t* acs = nullptr) {
    const std::size_t in = nw.in_dim(), out = nw.out_dim();
    if (spikes.shape.size() != 2 || spikes.cols() != in)
        throw DimensionError("spike_linear: spikes " + shape_str(spikes.shape) + " vs fan-in " + std::to_string(in));
    const std::size_t rows = spikes.rows();
    Tensor<Real> y({rows, out});
    std::uint64_t adds = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        auto dst = y.row(r);
        std::copy(nw.bias.vec().begin(), nw.bias.vec().end(), dst.begin());
        adds += out;
        for (std::size_t i = 0; i < in; ++i) {
            const SpikeIndex p = spikes.at(r, i);
            if (!p) continue;
            if (p > nw.banks.size()) throw DomainError("spike_linear: spike index beyond bank count");
            auto src = nw.banks[p - 1].row(i);
            for (std::size_t j = 0; j < out; ++j) dst[j] += src[j];
            adds += out;
        }
    }
    if (acs) *acs += adds;
    return y;
}

enum class SnnKind { mt_neuron, spike_linear, matmul_ec, ec, prepend_cls, pos_add, residual_add, analog_head };

inline const char* to_string(SnnKind k) {
    switch (k) {
        case SnnKind::mt_neuron: return "mt_neuron";
        case SnnKind::spike_linear: return "spike_linear";
        case SnnKind::matmul_ec: return "matmul_ec";
        case SnnKind::ec: return "ec";
        case SnnKind::prepend_cls: return "prepend_cls";
        case SnnKind::pos_add: return "pos_add";
        case SnnKind::residual_add: return "residual_add";
        case SnnKind::analog_head: return "analog_head";
    }
    return "?";
}

/// One step of the SNN program. Analog activations and spike maps live in
/// separate namespaces; `spikes_in` / `spikes_out` name spike maps.
struct SnnLayerSpec {
    SnnKind kind{};
    std::string name;     // for neurons the site id, otherwise the ANN layer name
    std::vector<Operand> inputs;  // analog inputs
    std::vector<std::string> spikes_in;
    std::string output;   // analog output
    std::string spikes_out;
    std::string source;   // ANN layer this came from
};

template <std::floating_point Real>
struct NeuronSpec {
    std::string site;
    ThresholdLadder<Real> ladder;  // thresholds in activation units
    bool normalized = false;       // input current arrives divided by theta1
    Real eta = 1;                  // theta2 / theta1
    Provenance provenance = Provenance::percentile;

    /// Ladder the membrane dynamics actually use.
    ThresholdLadder<Real> dynamics_ladder() const {
        return normalized ? build_ladder<Real>(Real(1), eta, ladder.n) : ladder;
    }
};

struct SnnOptions {
    bool normalize = true;  // feed neurons behind spike-driven linears in theta1 units
};

template <std::floating_point Real>
struct SnnGraph {
    ModelGraph<Real> ann;
    int n = 8;
    double percent = 99.0;
    SnnOptions options;
    std::vector<SnnLayerSpec> layers;
    std::map<std::string, NeuronSpec<Real>> neurons;          // by site id
    std::map<std::string, NormalizedWeights<Real>> linears;   // by ANN layer name

    const ModelConfig& config() const { return ann.config; }
};

namespace detail {

inline bool columns_overlap(const Operand& a, std::size_t begin, std::size_t count, std::size_t width) {
    const std::size_t ab = a.cols ? a.col_begin : 0, ac = a.cols ? a.cols : width;
    return ab < begin + count && begin < ab + ac;
}

}  // namespace detail

template <std::floating_point Real>
SnnGraph<Real> convert(const ModelGraph<Real>& model, const ThresholdSet& ts, SnnOptions opts = {}) {
    if (auto miss = missing_sites(model, ts); !miss.empty()) {
        std::string names;
        for (const auto& s : miss) names += (names.empty() ? "" : ", ") + s;
        throw ValidationError("thresholds missing for site(s): " + names);
    }
    SnnGraph<Real> g{model, ts.n, ts.percent, opts, {}, {}, {}};
    auto neuron = [&](const std::string& site, const Operand& in) {
        const auto& th = ts.at(site);
        NeuronSpec<Real> ns{site, build_ladder<Real>(static_cast<Real>(th.theta1), static_cast<Real>(th.theta2), ts.n),
                            false, static_cast<Real>(th.theta2 / th.theta1), th.provenance};
        g.neurons.emplace(site, std::move(ns));
        g.layers.push_back({SnnKind::mt_neuron, site, {in}, {}, {}, site + ".spikes", site});
    };

    for (const auto& l : model.layers) {
        switch (l.kind) {
            case LayerKind::embed_linear:
                neuron(l.name, l.inputs[0]);
                g.layers.push_back({SnnKind::spike_linear, l.name, {}, {l.name + ".spikes"}, l.name + ".patches", {}, l.name});
                g.layers.push_back({SnnKind::prepend_cls, l.name + ".cls", {{l.name + ".patches"}}, {}, l.output, {}, l.name});
                break;
            case LayerKind::linear:
                neuron(l.name, l.inputs[0]);
                g.layers.push_back({SnnKind::spike_linear, l.name, {}, {l.name + ".spikes"}, l.output, {}, l.name});
                break;
            case LayerKind::matmul: {
                const auto sites = l.sites();
                neuron(sites[0], l.inputs[0]);
                neuron(sites[1], l.inputs[1]);
                g.layers.push_back({SnnKind::matmul_ec, l.name, {}, {sites[0] + ".spikes", sites[1] + ".spikes"},
                                    l.output, {}, l.name});
                break;
            }
            case LayerKind::layernorm:
            case LayerKind::softmax:
            case LayerKind::gelu:
                g.layers.push_back({SnnKind::ec, l.name, l.inputs, {}, l.output, {}, l.name});
                break;
            case LayerKind::pos_add:
                g.layers.push_back({SnnKind::pos_add, l.name, l.inputs, {}, l.output, {}, l.name});
                break;
            case LayerKind::residual_add:
                g.layers.push_back({SnnKind::residual_add, l.name, l.inputs, {}, l.output, {}, l.name});
                break;
            case LayerKind::cls_head:
                g.layers.push_back({SnnKind::analog_head, l.name, l.inputs, {}, l.output, {}, l.name});
                break;
        }
    }

    // Weight banks. Output columns read directly by a neuron are divided by
    // that neuron's theta1 and the neuron runs with thresholds (1, eta).
    for (const auto& l : model.layers) {
        if (l.kind != LayerKind::linear && l.kind != LayerKind::embed_linear) continue;
        const auto& w = model.weight(l.weight);
        const std::size_t out = w.dim(1);
        std::vector<Real> scale(out, Real(1));
        if (opts.normalize && l.kind == LayerKind::linear) {
            for (const auto& sl : g.layers) {
                if (sl.kind != SnnKind::mt_neuron || sl.inputs[0].tensor != l.output) continue;
                auto& ns = g.neurons.at(sl.name);
                const auto& op = sl.inputs[0];
                const std::size_t b = op.cols ? op.col_begin : 0, c = op.cols ? op.cols : out;
                for (std::size_t j = b; j < b + c; ++j) scale[j] = ns.ladder.theta1;
                ns.normalized = true;
            }
        }
        g.linears.emplace(l.name, normalize_weights(w, model.weight(l.bias), g.neurons.at(l.name).ladder, std::move(scale)));
    }
    return g;
}

/// Structural checks on a converted graph; returns one message per violation.
template <std::floating_point Real>
std::vector<std::string> validate_snn(const SnnGraph<Real>& g) {
    std::vector<std::string> bad;
    std::map<std::string, int> neuron_count;
    std::map<std::string, const SnnLayerSpec*> spike_producer;
    std::set<std::string> ec_names, matmul_ec_names, spike_linear_names;
    for (const auto& l : g.layers) {
        if (l.kind == SnnKind::mt_neuron) {
            ++neuron_count[l.name];
            spike_producer[l.spikes_out] = &l;
            if (!g.neurons.contains(l.name)) bad.push_back("neuron '" + l.name + "' has no threshold spec");
        }
        if (l.kind == SnnKind::ec) ec_names.insert(l.name);
        if (l.kind == SnnKind::matmul_ec) matmul_ec_names.insert(l.name);
        if (l.kind == SnnKind::spike_linear) spike_linear_names.insert(l.name);
        for (const auto& s : l.spikes_in)
            if (!spike_producer.contains(s)) bad.push_back("layer '" + l.name + "' reads spikes '" + s + "' before any neuron emits them");
    }
    for (const auto& al : g.ann.layers) {
        switch (al.kind) {
            case LayerKind::linear:
            case LayerKind::embed_linear: {
                if (neuron_count[al.name] != 1)
                    bad.push_back("linear '" + al.name + "' is preceded by " + std::to_string(neuron_count[al.name]) +
                                  " neurons, expected 1");
                if (!spike_linear_names.contains(al.name)) bad.push_back("linear '" + al.name + "' is not spike-driven");
                auto it = g.linears.find(al.name);
                if (it == g.linears.end())
                    bad.push_back("linear '" + al.name + "' has no weight banks");
                else if (g.neurons.contains(al.name) &&
                         it->second.banks.size() != g.neurons.at(al.name).ladder.channels())
                    bad.push_back("linear '" + al.name + "' bank count differs from 2n");
                break;
            }
            case LayerKind::matmul:
                for (const auto& s : al.sites())
                    if (neuron_count[s] != 1) bad.push_back("matmul operand '" + s + "' lacks exactly one neuron");
                if (!matmul_ec_names.contains(al.name)) bad.push_back("matmul '" + al.name + "' not replaced by a matmul EC");
                break;
            case LayerKind::layernorm:
            case LayerKind::softmax:
            case LayerKind::gelu:
                if (!ec_names.contains(al.name)) bad.push_back("nonlinear '" + al.name + "' not wrapped in an EC module");
                break;
            case LayerKind::cls_head:
                if (neuron_count.contains(al.name)) bad.push_back("classification head must take analog input");
                break;
            default: break;
        }
    }
    for (const auto& l : g.layers)
        if (l.kind == SnnKind::analog_head && !l.spikes_in.empty()) bad.push_back("classification head reads spikes");
    for (const auto& [site, ns] : g.neurons)
        if (!(ns.ladder.theta1 > 0 && ns.ladder.theta2 > 0)) bad.push_back("neuron '" + site + "' has a non-positive threshold");
    return bad;
}

/// Thresholds carried by a converted graph, in the calibration file layout.
template <std::floating_point Real>
ThresholdSet thresholds_of(const SnnGraph<Real>& g) {
    ThresholdSet ts;
    ts.n = g.n;
    ts.percent = g.percent;
    for (const auto& [site, ns] : g.neurons)
        ts.sites[site] = {static_cast<double>(ns.ladder.theta1), static_cast<double>(ns.ladder.theta2), ns.provenance};
    return ts;
}

inline std::string bank_tensor_name(const std::string& linear, std::size_t p) {
    return "snn." + linear + ".bank" + std::to_string(p + 1);
}

template <std::floating_point Real>
json snn_to_json(const SnnGraph<Real>& g) {
    json neurons = json::object();
    for (const auto& [site, ns] : g.neurons)
        neurons[site] = {{"theta1", static_cast<double>(ns.ladder.theta1)},
                         {"theta2", static_cast<double>(ns.ladder.theta2)},
                         {"n", ns.ladder.n},
                         {"eta", static_cast<double>(ns.eta)},
                         {"normalized", ns.normalized},
                         {"provenance", to_string(ns.provenance)}};
    json linears = json::object();
    for (const auto& [name, nw] : g.linears) {
        json banks = json::array();
        for (std::size_t p = 0; p < nw.banks.size(); ++p) banks.push_back(bank_tensor_name(name, p));
        std::vector<double> scale(nw.out_scale.begin(), nw.out_scale.end());
        linears[name] = {{"banks", banks}, {"bias", "snn." + name + ".bias"}, {"out_scale", scale}};
    }
    json layers = json::array();
    for (const auto& l : g.layers) {
        json ins = json::array();
        for (const auto& op : l.inputs) ins.push_back({{"tensor", op.tensor}, {"col_begin", op.col_begin}, {"cols", op.cols}});
        layers.push_back({{"kind", to_string(l.kind)}, {"name", l.name}, {"inputs", ins}, {"spikes_in", l.spikes_in},
                          {"output", l.output}, {"spikes_out", l.spikes_out}});
    }
    return {{"format_version", kFormatVersion},
            {"n", g.n},
            {"percentile", g.percent},
            {"flags", {{"normalize", g.options.normalize}, {"analog_head", true}}},
            {"neurons", neurons},
            {"linears", linears},
            {"layers", layers}};
}

/// SNN archive: the ANN weight archive plus weight banks, and snn.json.
template <std::floating_point Real>
void save_snn(const SnnGraph<Real>& g, const std::filesystem::path& dir) {
    auto tensors = model_tensors_f32(g.ann);
    for (const auto& [name, nw] : g.linears) {
        for (std::size_t p = 0; p < nw.banks.size(); ++p) tensors.emplace(bank_tensor_name(name, p), tensor_cast<float>(nw.banks[p]));
        tensors.emplace("snn." + name + ".bias", tensor_cast<float>(nw.bias));
    }
    write_archive(dir, config_to_json(g.ann.config), tensors);
    write_json_file(dir / "snn.json", snn_to_json(g));
}

/// Rebuilds the graph from the ANN tensors and recorded thresholds, then
/// checks the stored banks against the rebuilt ones.
template <std::floating_point Real>
SnnGraph<Real> load_snn(const std::filesystem::path& dir) {
    const RawArchive ar = read_archive(dir);
    const json meta = read_json_file(dir / "snn.json");
    ModelGraph<Real> model = model_from_archive<Real>(ar);
    ThresholdSet ts;
    SnnOptions opts;
    try {
        if (meta.at("format_version").get<int>() != kFormatVersion) throw FormatError("snn.json: unsupported format_version");
        ts.n = meta.at("n").get<int>();
        ts.percent = meta.at("percentile").get<double>();
        opts.normalize = meta.at("flags").at("normalize").get<bool>();
        for (const auto& item : meta.at("neurons").items()) {
            const json& e = item.value();
            ts.sites[item.key()] = {e.at("theta1").get<double>(), e.at("theta2").get<double>(),
                              e.at("provenance").get<std::string>() == "override" ? Provenance::override_value
                                                                                  : Provenance::percentile};
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("snn.json: ") + e.what());
    }
    SnnGraph<Real> g = convert(model, ts, opts);
    for (const auto& [name, nw] : g.linears)
        for (std::size_t p = 0; p < nw.banks.size(); ++p) {
            auto it = ar.tensors.find(bank_tensor_name(name, p));
            if (it == ar.tensors.end()) throw FormatError("SNN archive lacks " + bank_tensor_name(name, p));
            const auto rebuilt = tensor_cast<float>(nw.banks[p]);
            if (it->second.shape() != rebuilt.shape()) throw FormatError(bank_tensor_name(name, p) + " has the wrong shape");
            for (std::size_t i = 0; i < rebuilt.size(); ++i)
                if (std::abs(it->second[i] - rebuilt[i]) > 1e-6f * std::max(1.0f, std::abs(rebuilt[i])))
                    throw FormatError(bank_tensor_name(name, p) + " does not match the recorded thresholds");
        }
    return g;
}

}  // namespace snnconv
