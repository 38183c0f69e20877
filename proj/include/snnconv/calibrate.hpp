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

// Threshold calibration: tap every calibration site while running the ANN over
// a dataset, then turn the pooled value distribution into base thresholds.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "snnconv/archive.hpp"

namespace snnconv {

inline constexpr double kMinThreshold = 1e-6;
inline constexpr std::size_t kExactStatsLimit = 10'000'000;
inline constexpr std::size_t kReservoirSize = std::size_t{1} << 20;

/// Pooled activation values seen at one calibration site. Values are kept
/// exactly up to kExactStatsLimit, then down-sampled to a seeded reservoir.
class SiteStats {
public:
    explicit SiteStats(std::string site_id = {}, std::uint64_t seed = 0)
        : site_id_(std::move(site_id)), rng_(seed) {}

    template <typename Real>
    void add(std::span<const Real> values) {
        for (Real v : values) add_one(static_cast<double>(v));
    }

    void merge(const SiteStats& other) {
        for (double v : other.values_) add_one(v);
        count_ += other.count_ - other.values_.size();
    }

    const std::string& site_id() const noexcept { return site_id_; }
    std::uint64_t count() const noexcept { return count_; }
    bool sampled() const noexcept { return sampled_; }
    std::span<const double> values() const noexcept { return values_; }

private:
    void add_one(double v) {
        ++count_;
        if (!sampled_) {
            values_.push_back(v);
            if (values_.size() > kExactStatsLimit) to_reservoir();
            return;
        }
        std::uniform_int_distribution<std::uint64_t> pick(0, count_ - 1);
        const auto slot = pick(rng_);
        if (slot < values_.size()) values_[slot] = v;
    }

    void to_reservoir() {
        std::shuffle(values_.begin(), values_.end(), rng_);
        values_.resize(kReservoirSize);
        sampled_ = true;
    }

    std::string site_id_;
    std::vector<double> values_;
    std::uint64_t count_ = 0;
    bool sampled_ = false;
    std::mt19937_64 rng_;
};

using SiteStatsMap = std::map<std::string, SiteStats>;

template <std::floating_point Real>
SiteStatsMap collect_stats(const ModelGraph<Real>& model, const Dataset<Real>& dataset, std::size_t max_samples,
                           std::uint64_t seed = 0) {
    if (dataset.size() == 0 || max_samples == 0) throw DomainError("calibration needs at least one sample");
    SiteStatsMap stats;
    for (const auto& site : model.calibration_sites()) stats.emplace(site, SiteStats(site, seed));
    const std::size_t count = std::min(max_samples, dataset.size());
    for (std::size_t s = 0; s < count; ++s) {
        const auto out = ann_forward(model, dataset.samples[s], true);
        for (const auto& [site, t] : out.taps) stats.at(site).add(t.values());
    }
    return stats;
}

enum class Provenance { percentile, override_value };

inline const char* to_string(Provenance p) { return p == Provenance::percentile ? "percentile" : "override"; }

struct SiteThreshold {
    double theta1 = 1.0;  // positive base threshold
    double theta2 = 1.0;  // magnitude of the negative base threshold
    Provenance provenance = Provenance::percentile;

    bool operator==(const SiteThreshold&) const = default;
};

struct ThresholdOverride {
    double theta1;
    double theta2;
};

/// Base thresholds for every calibration site, shared threshold count n.
struct ThresholdSet {
    int n = 8;
    double percent = 99.0;
    std::map<std::string, SiteThreshold> sites;
    std::vector<std::string> warnings;

    const SiteThreshold& at(const std::string& site) const {
        auto it = sites.find(site);
        if (it == sites.end()) throw ValidationError("no threshold for site '" + site + "'");
        return it->second;
    }
};

/// Fixed thresholds for sites fed by GELU (the fc2 input) and by softmax (the
/// probability operand of the attention-value product).
inline std::map<std::string, ThresholdOverride> default_overrides(const ModelConfig& cfg) {
    std::map<std::string, ThresholdOverride> o;
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        o[block_prefix(b) + "mlp.fc2"] = {0.5, 0.08};
        o[block_prefix(b) + "attn.sv.a"] = {0.0125, 0.0125};
    }
    return o;
}

inline ThresholdSet derive_thresholds(const SiteStatsMap& stats, double percent, int n,
                                      const std::map<std::string, ThresholdOverride>& overrides = {}) {
    if (!(percent > 50.0 && percent <= 100.0)) throw DomainError("percentile must lie in (50, 100]");
    if (n < 1) throw DomainError("threshold count n must be >= 1");
    ThresholdSet ts;
    ts.n = n;
    ts.percent = percent;
    const double p = percent / 100.0;
    for (const auto& [site, st] : stats) {
        if (auto it = overrides.find(site); it != overrides.end()) {
            if (!(it->second.theta1 > 0 && it->second.theta2 > 0))
                throw DomainError("override for '" + site + "' must be positive");
            ts.sites[site] = {it->second.theta1, it->second.theta2, Provenance::override_value};
            continue;
        }
        if (st.values().empty()) throw DomainError("site '" + site + "' has no statistics");
        double t1 = quantile_rank<double>(st.values(), p);
        double t2 = -quantile_rank<double>(st.values(), 1.0 - p);
        if (t1 < kMinThreshold) {
            ts.warnings.push_back("site '" + site + "': upper percentile " + std::to_string(t1) +
                                  " not positive, using minimum threshold");
            t1 = kMinThreshold;
        }
        t2 = std::max(t2, kMinThreshold);
        ts.sites[site] = {t1, t2, Provenance::percentile};
    }
    for (const auto& [site, o] : overrides)
        if (!ts.sites.contains(site))
            ts.warnings.push_back("override for unknown site '" + site + "' ignored");
    return ts;
}

/// Sites of the model with no entry in the threshold set.
template <std::floating_point Real>
std::vector<std::string> missing_sites(const ModelGraph<Real>& model, const ThresholdSet& ts) {
    std::vector<std::string> missing;
    for (const auto& s : model.calibration_sites())
        if (!ts.sites.contains(s)) missing.push_back(s);
    return missing;
}

inline json thresholds_to_json(const ThresholdSet& ts) {
    json sites = json::object();
    for (const auto& [id, t] : ts.sites)
        sites[id] = {{"theta1", t.theta1}, {"theta2", t.theta2}, {"n", ts.n}, {"provenance", to_string(t.provenance)}};
    return {{"format_version", kFormatVersion},
            {"n", ts.n},
            {"percentile", ts.percent},
            {"sites", sites},
            {"warnings", ts.warnings}};
}

inline ThresholdSet thresholds_from_json(const json& j) {
    try {
        if (j.at("format_version").get<int>() != kFormatVersion)
            throw FormatError("thresholds: unsupported format_version");
        ThresholdSet ts;
        ts.n = j.at("n").get<int>();
        ts.percent = j.at("percentile").get<double>();
        if (ts.n < 1) throw ValidationError("thresholds: n must be >= 1");
        for (const auto& [id, e] : j.at("sites").items()) {
            SiteThreshold t;
            t.theta1 = e.at("theta1").get<double>();
            t.theta2 = e.at("theta2").get<double>();
            const auto prov = e.at("provenance").get<std::string>();
            if (prov != "percentile" && prov != "override")
                throw FormatError("thresholds: unknown provenance '" + prov + "'");
            t.provenance = prov == "override" ? Provenance::override_value : Provenance::percentile;
            if (!(t.theta1 > 0 && t.theta2 > 0))
                throw ValidationError("thresholds: site '" + id + "' has a non-positive threshold");
            ts.sites[id] = t;
        }
        if (j.contains("warnings")) ts.warnings = j["warnings"].get<std::vector<std::string>>();
        return ts;
    } catch (const json::exception& e) {
        throw FormatError(std::string("thresholds: ") + e.what());
    }
}

}  // namespace snnconv
