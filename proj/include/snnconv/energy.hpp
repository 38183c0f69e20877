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

// Operation accounting and the AC/MAC energy model.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "snnconv/model.hpp"

namespace snnconv {

struct OpCount {
    std::uint64_t acs = 0;   // scalar accumulations
    std::uint64_t macs = 0;  // scalar multiply-accumulates

    OpCount& operator+=(const OpCount& o) {
        acs += o.acs;
        macs += o.macs;
        return *this;
    }
    bool operator==(const OpCount&) const = default;
};

enum class ModuleClass { neuron, linear, matmul, nonlinear, analog, head };

inline const char* to_string(ModuleClass c) {
    switch (c) {
        case ModuleClass::neuron: return "neuron";
        case ModuleClass::linear: return "linear";
        case ModuleClass::matmul: return "matmul";
        case ModuleClass::nonlinear: return "nonlinear";
        case ModuleClass::analog: return "analog";
        case ModuleClass::head: return "head";
    }
    return "?";
}

/// Per-module AC/MAC counters. Merging is plain addition, so ledgers from
/// independent runs combine in any order.
class OpsLedger {
public:
    struct Entry {
        ModuleClass cls = ModuleClass::analog;
        OpCount ops;
    };

    void add(const std::string& module, ModuleClass cls, std::uint64_t acs, std::uint64_t macs) {
        auto& e = entries_[module];
        e.cls = cls;
        e.ops += OpCount{acs, macs};
    }

    void merge(const OpsLedger& other) {
        for (const auto& [name, e] : other.entries_) add(name, e.cls, e.ops.acs, e.ops.macs);
    }

    OpCount total() const {
        OpCount t;
        for (const auto& [name, e] : entries_) t += e.ops;
        return t;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

private:
    std::map<std::string, Entry> entries_;
};

struct EnergyModel {
    double e_mac_pj = 4.6;
    double e_ac_pj = 0.9;

    void validate() const {
        if (!(e_mac_pj > 0 && e_ac_pj > 0)) throw DomainError("energy constants must be positive");
    }
};

struct ComplexityRow {
    std::string module;
    std::string formula;
    std::uint64_t macs = 0;
};

/// Per-block ANN MAC counts of a ViT encoder block.
inline std::vector<ComplexityRow> ann_complexity(std::uint64_t n, std::uint64_t c, std::uint64_t nh,
                                                 std::uint64_t ch) {
    if (!n || !c || !nh || !ch) throw DomainError("ann_complexity: dimensions must be >= 1");
    if (c % nh) throw DomainError("ann_complexity: C must be divisible by Nh");
    const std::uint64_t d = c / nh;
    return {
        {"LayerNorm 1", "N*C", n * c},
        {"Linear qkv", "N*C*3C", n * c * 3 * c},
        {"Matrix Product q,k", "Nh*N*(C/Nh)^2", nh * n * d * d},
        {"Softmax", "Nh*N*N", nh * n * n},
        {"Matrix Product s,v", "Nh*N*N*(C/Nh)", nh * n * n * d},
        {"Linear out", "N*C*C", n * c * c},
        {"LayerNorm 2", "N*C", n * c},
        {"MLP Linear 1", "N*C*Ch", n * c * ch},
        {"GELU", "N*Ch", n * ch},
        {"MLP Linear 2", "N*Ch*C", n * ch * c},
    };
}

struct AnnMacs {
    std::uint64_t per_block = 0;  // sum of the block table
    std::uint64_t blocks = 0;     // per_block * num_blocks
    std::uint64_t embed = 0;      // patch embedding linear
    std::uint64_t head = 0;       // classification head on the CLS row
    std::uint64_t total() const { return blocks + embed + head; }
};

inline AnnMacs ann_macs(const ModelConfig& cfg) {
    AnnMacs m;
    for (const auto& r : ann_complexity(cfg.num_tokens, cfg.dim, cfg.heads, cfg.mlp_dim)) m.per_block += r.macs;
    m.blocks = m.per_block * cfg.num_blocks;
    m.embed = static_cast<std::uint64_t>(cfg.num_patches()) * cfg.in_dim * cfg.dim;
    m.head = static_cast<std::uint64_t>(cfg.dim) * cfg.num_classes;
    return m;
}

struct EnergyRatio {
    double strict = 0;  // every counted MAC and AC
    double paper = 0;   // SNN MACs taken as zero
};

inline EnergyRatio energy_ratio(const OpCount& snn, double ann_mac_count, const EnergyModel& em = {}) {
    em.validate();
    if (!(ann_mac_count > 0)) throw DomainError("energy_ratio: ANN MAC count must be positive");
    const double ann_energy = ann_mac_count * em.e_mac_pj;
    const double ac_energy = static_cast<double>(snn.acs) * em.e_ac_pj;
    return {(static_cast<double>(snn.macs) * em.e_mac_pj + ac_energy) / ann_energy, ac_energy / ann_energy};
}

struct OpBounds {
    double acs_max = 0;
    double macs_max = 0;
};

/// Worst-case additions and multiplications of one matrix-product EC update
/// for an (n x p) by (p x m) product at firing rates rate_a, rate_b.
inline OpBounds matmul_ec_bounds(double rate_a, double rate_b, std::size_t n, std::size_t p, std::size_t m) {
    if (!(rate_a >= 0 && rate_a <= 1 && rate_b >= 0 && rate_b <= 1))
        throw DomainError("matmul_ec_bounds: firing rates must lie in [0, 1]");
    if (!n || !p || !m) throw DomainError("matmul_ec_bounds: dimensions must be >= 1");
    const double npm = static_cast<double>(n) * static_cast<double>(p) * static_cast<double>(m);
    const double nm = static_cast<double>(n) * static_cast<double>(m);
    return {rate_a * rate_b * npm + rate_a * npm + rate_b * npm + 3 * nm,
            std::min(rate_a, rate_b) * nm + rate_a * nm + rate_b * nm};
}

}  // namespace snnconv
