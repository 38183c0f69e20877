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

// snnconv: calibrate, convert and simulate ViT-to-SNN conversions.
//
// Exit codes: 0 ok, 1 I/O or file format, 2 usage or validation,
// 3 conversion invariant, 4 verification failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "snnconv/verify.hpp"

namespace fs = std::filesystem;
using namespace snnconv;

namespace {

constexpr int kExitOk = 0, kExitIo = 1, kExitUsage = 2, kExitInvariant = 3, kExitVerify = 4;
constexpr const char* kOutDirEnv = "SNNCONV_OUT_DIR";

struct ExitError : std::runtime_error {
    int code;
    ExitError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

fs::path out_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return "out";
}

std::string join(const std::vector<std::string>& v, const char* sep = ", ") {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : sep) + x;
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text)) throw IoError("cannot write " + path.string());
}

json spike_stats_json(const std::map<std::string, NeuronLayerStats>& stats) {
    const auto fr = spike_statistics(stats);
    json per_layer = json::object();
    for (const auto& [site, rates] : fr.per_layer) {
        const auto& s = stats.at(site);
        per_layer[site] = {{"rates", rates}, {"neurons", s.neurons}, {"saturation_events", s.saturation_events}};
    }
    return {{"aggregate_rates", fr.aggregate}, {"aggregate_counts", fr.aggregate_counts}, {"per_layer", per_layer}};
}

json ledger_json(const OpsLedger& ledger, double scale = 1.0) {
    json j = json::object();
    for (const auto& [name, e] : ledger.entries())
        j[name] = {{"class", to_string(e.cls)},
                   {"acs", static_cast<double>(e.ops.acs) * scale},
                   {"macs", static_cast<double>(e.ops.macs) * scale}};
    return j;
}

// ---- toy ----

struct ToyArgs {
    std::string out;
    std::uint64_t seed = 5;
    std::size_t blocks = 2;
    std::size_t samples = 64;
};

int cmd_toy(const ToyArgs& a) {
    const fs::path dir = out_dir(a.out);
    const auto model = make_toy_model<double>(verify::toy_config(a.blocks), a.seed);
    save_model(model, dir / "model");
    save_dataset(make_toy_dataset(model, a.samples, a.seed + 1), dir / "data");
    std::printf("wrote %s and %s (%zu blocks, %zu samples)\n", (dir / "model").string().c_str(),
                (dir / "data").string().c_str(), a.blocks, a.samples);
    return kExitOk;
}

// ---- calibrate ----

struct CalibrateArgs {
    std::string model, data, out;
    int n = 8;
    double percentile = 99.0;
    std::size_t max_samples = 0;
    std::uint64_t seed = 0;
    bool no_overrides = false;
};

int cmd_calibrate(const CalibrateArgs& a) {
    const auto model = load_model<double>(a.model);
    const auto ds = load_dataset<double>(a.data);
    if (ds.tokens_per_sample != model.config.num_patches() || ds.dim != model.config.in_dim)
        throw ExitError(kExitUsage, "dataset samples do not match the model input shape");
    const auto stats = collect_stats(model, ds, a.max_samples ? a.max_samples : ds.size(), a.seed);
    const auto ts = derive_thresholds(stats, a.percentile, a.n,
                                      a.no_overrides ? std::map<std::string, ThresholdOverride>{}
                                                     : default_overrides(model.config));
    if (auto miss = missing_sites(model, ts); !miss.empty())
        throw ExitError(kExitUsage, "no statistics for site(s): " + join(miss));
    const fs::path path = out_dir(a.out) / "thresholds.json";
    write_json_file(path, thresholds_to_json(ts));
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (const auto& [site, t] : ts.sites) {
        lo = std::min(lo, t.theta1);
        hi = std::max(hi, t.theta1);
    }
    std::printf("%zu sites, theta1 in [%.6g, %.6g], n=%d, p=%g -> %s\n", ts.sites.size(), lo, hi, ts.n, ts.percent,
                path.string().c_str());
    for (const auto& w : ts.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    return kExitOk;
}

// ---- convert ----

struct ConvertArgs {
    std::string model, thresholds, out;
    bool no_normalize = false;
};

int cmd_convert(const ConvertArgs& a) {
    const auto model = load_model<double>(a.model);
    const auto ts = thresholds_from_json(read_json_file(a.thresholds));
    if (auto miss = missing_sites(model, ts); !miss.empty())
        throw ExitError(kExitInvariant, "thresholds missing for site(s): " + join(miss));
    const auto g = convert(model, ts, SnnOptions{.normalize = !a.no_normalize});
    if (auto bad = validate_snn(g); !bad.empty())
        throw ExitError(kExitInvariant, "converted graph violates invariants: " + join(bad, "; "));
    const fs::path dir = out_dir(a.out) / "snn";
    save_snn(g, dir);
    std::printf("%zu SNN layers, %zu neuron groups, %zu spike-driven linears -> %s\n", g.layers.size(),
                g.neurons.size(), g.linears.size(), dir.string().c_str());
    return kExitOk;
}

// ---- run ----

struct RunArgs {
    std::string snn, data, out, mode = "mt", precision = "f64";
    std::size_t timesteps = 8;
    std::size_t max_samples = 0;
    unsigned workers = 0;
    std::uint64_t seed = 0;
};

template <std::floating_point Real>
int run_impl(const RunArgs& a) {
    const auto g = load_snn<Real>(a.snn);
    const auto ds = load_dataset<Real>(a.data);
    const auto& cfg = g.config();
    if (ds.tokens_per_sample != cfg.num_patches() || ds.dim != cfg.in_dim)
        throw ExitError(kExitUsage, "dataset samples do not match the model input shape");
    const RunMode mode = a.mode == "mt" ? RunMode::mt : RunMode::analog_ec_only;
    const auto r = run_dataset(g, ds, a.timesteps, mode, a.max_samples, a.workers);
    const double ann = static_cast<double>(ann_macs(cfg).total());

    json steps = json::array();
    for (std::size_t t = 0; t < r.steps; ++t) {
        const auto ratio = energy_ratio(r.ops_per_sample[t], ann);
        steps.push_back({{"t", t + 1},
                         {"agreement", r.agreement[t]},
                         {"accuracy", r.accuracy[t]},
                         {"mean_logit_error", r.mean_logit_error[t]},
                         {"max_logit_error", r.max_logit_error[t]},
                         {"acs_per_sample", r.ops_per_sample[t].acs},
                         {"macs_per_sample", r.ops_per_sample[t].macs},
                         {"energy_ratio_strict", ratio.strict},
                         {"energy_ratio_paper", ratio.paper}});
    }
    json report{{"format_version", kFormatVersion},
                {"command", "run"},
                {"config",
                 {{"snn", a.snn},
                  {"data", a.data},
                  {"timesteps", a.timesteps},
                  {"mode", to_string(mode)},
                  {"precision", a.precision},
                  {"max_samples", a.max_samples},
                  {"seed", a.seed},
                  {"n", g.n},
                  {"percentile", g.percent},
                  {"model", config_to_json(cfg)}}},
                {"samples", r.samples},
                {"ann_accuracy", r.ann_accuracy},
                {"ann_macs", ann},
                {"steps", steps},
                {"spike_stats", spike_stats_json(r.neuron_stats)},
                {"ledger_per_sample", ledger_json(r.ledger, 1.0 / static_cast<double>(r.samples))},
                {"bounds",
                 {{"steps", r.bounds.steps},
                  {"violations", r.bounds.violations},
                  {"max_add_fraction", r.bounds.max_add_fraction}}}};
    const fs::path dir = out_dir(a.out);
    write_json_file(dir / "run_report.json", report);

    // T sweep: one column per step, one row per measure.
    std::ostringstream csv;
    csv << "metric";
    for (std::size_t t = 1; t <= r.steps; ++t) csv << ",T=" << t;
    csv << '\n';
    csv.precision(10);
    for (const char* key : {"accuracy", "agreement", "energy_ratio_paper", "energy_ratio_strict"}) {
        csv << key;
        for (const auto& s : steps) csv << ',' << s[key].get<double>();
        csv << '\n';
    }
    write_text(dir / "tsweep.csv", csv.str());

    std::printf("%zu samples, T=%zu, mode %s: agreement %.4f, mean logit error %.3g, paper energy ratio %.4f -> %s\n",
                r.samples, r.steps, to_string(mode), r.agreement.back(), r.mean_logit_error.back(),
                steps.back()["energy_ratio_paper"].get<double>(), (dir / "run_report.json").string().c_str());
    return kExitOk;
}

int cmd_run(const RunArgs& a) { return a.precision == "f32" ? run_impl<float>(a) : run_impl<double>(a); }

// ---- oracle ----

struct OracleArgs {
    std::string model, data, out;
    std::size_t max_samples = 0;
};

int cmd_oracle(const OracleArgs& a) {
    const auto model = load_model<double>(a.model);
    const auto ds = load_dataset<double>(a.data);
    if (ds.tokens_per_sample != model.config.num_patches() || ds.dim != model.config.in_dim)
        throw ExitError(kExitUsage, "dataset samples do not match the model input shape");
    const std::size_t count = a.max_samples ? std::min(a.max_samples, ds.size()) : ds.size();
    std::size_t correct = 0;
    json preds = json::array();
    for (std::size_t i = 0; i < count; ++i) {
        const auto out = ann_forward(model, ds.samples[i]);
        const auto top = argmax<double>(out.logits.values());
        correct += static_cast<int>(top) == ds.labels[i];
        preds.push_back(top);
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(count);
    json report{{"format_version", kFormatVersion},
                {"command", "oracle"},
                {"config", {{"model", a.model}, {"data", a.data}, {"max_samples", a.max_samples}}},
                {"samples", count},
                {"accuracy", acc},
                {"ann_macs", ann_macs(model.config).total()},
                {"predictions", preds}};
    const fs::path path = out_dir(a.out) / "oracle_report.json";
    write_json_file(path, report);
    std::printf("ANN top-1 %.4f over %zu samples -> %s\n", acc, count, path.string().c_str());
    return kExitOk;
}

// ---- verify ----

struct VerifyArgs {
    std::vector<std::string> suites{"all"};
    std::size_t cases = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_verify(const VerifyArgs& a) {
    const auto results = verify::run_suites(a.suites, a.cases, a.seed);
    json suites = json::array();
    std::vector<std::string> failed;
    for (const auto& r : results) {
        std::printf("%s %-14s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        suites.push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
        if (!r.pass) failed.push_back(r.name);
    }
    json verdict{{"format_version", kFormatVersion},
                 {"command", "verify"},
                 {"config", {{"suites", a.suites}, {"cases", a.cases}, {"seed", a.seed}}},
                 {"passed", failed.empty()},
                 {"failed", failed},
                 {"suites", suites}};
    write_json_file(out_dir(a.out) / "verdict.json", verdict);
    if (!failed.empty()) throw ExitError(kExitVerify, "failing properties: " + join(failed));
    return kExitOk;
}

// ---- report ----

struct ReportArgs {
    std::string run, out;
    std::uint64_t n = 0, c = 0, heads = 0, mlp = 0;
};

int cmd_report(const ReportArgs& a) {
    json table = json::array();
    json out{{"format_version", kFormatVersion}, {"command", "report"}, {"energy_model", {{"e_mac_pj", 4.6}, {"e_ac_pj", 0.9}}}};
    if (a.n) {
        for (const auto& r : ann_complexity(a.n, a.c, a.heads, a.mlp))
            table.push_back({{"module", r.module}, {"formula", r.formula}, {"macs", r.macs},
                             {"macs_millions", static_cast<double>(r.macs) / 1e6}});
        out["config"] = {{"N", a.n}, {"C", a.c}, {"Nh", a.heads}, {"Ch", a.mlp}};
        out["ann_block_table"] = table;
    }
    if (!a.run.empty()) {
        const json run = read_json_file(a.run);
        try {
            const auto cfg = config_from_json(run.at("config").at("model"));
            const auto macs = ann_macs(cfg);
            for (const auto& r : ann_complexity(cfg.num_tokens, cfg.dim, cfg.heads, cfg.mlp_dim))
                table.push_back({{"module", r.module}, {"formula", r.formula}, {"macs", r.macs}});
            out["config"] = run.at("config");
            out["ann_block_table"] = table;
            out["ann_macs"] = {{"per_block", macs.per_block}, {"blocks", macs.blocks}, {"embed", macs.embed},
                               {"head", macs.head}, {"total", macs.total()}};
            json ratios = json::array();
            for (const auto& s : run.at("steps"))
                ratios.push_back({{"t", s.at("t")},
                                  {"acs_per_sample", s.at("acs_per_sample")},
                                  {"macs_per_sample", s.at("macs_per_sample")},
                                  {"strict", s.at("energy_ratio_strict")},
                                  {"paper", s.at("energy_ratio_paper")}});
            out["energy_ratio"] = ratios;
            out["ledger_per_sample"] = run.at("ledger_per_sample");
            out["bounds"] = run.at("bounds");
        } catch (const json::exception& e) {
            throw FormatError(std::string("run report: ") + e.what());
        }
    }
    if (!out.contains("ann_block_table")) throw ExitError(kExitUsage, "report needs --run or --dims");
    const fs::path path = out_dir(a.out) / "energy_report.json";
    write_json_file(path, out);
    for (const auto& r : out["ann_block_table"])
        std::printf("%-20s %-16s %14.2fM\n", r["module"].get<std::string>().c_str(),
                    r["formula"].get<std::string>().c_str(), r["macs"].get<double>() / 1e6);
    std::printf("-> %s\n", path.string().c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViT-to-SNN conversion with multi-threshold neurons and expectation compensation"};
    app.require_subcommand(1);

    ToyArgs toy;
    auto* c_toy = app.add_subcommand("toy", "Write a seeded toy ViT archive and dataset");
    c_toy->add_option("--out", toy.out, "Output directory (default $" + std::string(kOutDirEnv) + " or ./out)");
    c_toy->add_option("--seed", toy.seed, "Seed for weights and samples");
    c_toy->add_option("--blocks", toy.blocks, "Encoder blocks")->check(CLI::Range(1, 64));
    c_toy->add_option("--samples", toy.samples, "Dataset size")->check(CLI::Range(1, 1000000));

    CalibrateArgs cal;
    auto* c_cal = app.add_subcommand("calibrate", "Derive base thresholds from ANN activations");
    c_cal->add_option("--model", cal.model, "Model archive directory")->required();
    c_cal->add_option("--data", cal.data, "Dataset directory")->required();
    c_cal->add_option("--out", cal.out, "Output directory");
    c_cal->add_option("-n,--n", cal.n, "Threshold pairs per neuron")->check(CLI::Range(1, kMaxThresholdPairs));
    c_cal->add_option("-p,--percentile", cal.percentile, "Percentile in (50, 100]")
        ->check(CLI::Range(50.0, 100.0) & CLI::Validator([](std::string& s) {
                    return std::stod(s) > 50.0 ? std::string{} : std::string("must exceed 50");
                }, "> 50"));
    c_cal->add_option("--max-samples", cal.max_samples, "Calibration samples (0 = all)");
    c_cal->add_option("--seed", cal.seed, "Seed for reservoir sampling on very large sites");
    c_cal->add_flag("--no-overrides", cal.no_overrides, "Use percentiles at the post-GELU/post-softmax sites too");

    ConvertArgs conv;
    auto* c_conv = app.add_subcommand("convert", "Build the SNN archive from a model and thresholds");
    c_conv->add_option("--model", conv.model, "Model archive directory")->required();
    c_conv->add_option("--thresholds", conv.thresholds, "thresholds.json")->required();
    c_conv->add_option("--out", conv.out, "Output directory");
    c_conv->add_flag("--no-normalize", conv.no_normalize, "Keep neurons in activation units");

    RunArgs run;
    auto* c_run = app.add_subcommand("run", "Simulate the SNN over a dataset");
    c_run->add_option("--snn", run.snn, "SNN archive directory")->required();
    c_run->add_option("--data", run.data, "Dataset directory")->required();
    c_run->add_option("-T,--timesteps", run.timesteps, "Time steps")->check(CLI::Range(1, 100000));
    c_run->add_option("--mode", run.mode, "mt or analog_ec_only")->check(CLI::IsMember({"mt", "analog_ec_only"}));
    c_run->add_option("--precision", run.precision, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));
    c_run->add_option("--max-samples", run.max_samples, "Samples to run (0 = all)");
    c_run->add_option("--workers", run.workers, "Worker threads (0 = hardware)");
    c_run->add_option("--seed", run.seed, "Recorded in the report; the simulation itself is deterministic");
    c_run->add_option("--out", run.out, "Output directory");

    OracleArgs orc;
    auto* c_orc = app.add_subcommand("oracle", "Evaluate the ANN alone");
    c_orc->add_option("--model", orc.model, "Model archive directory")->required();
    c_orc->add_option("--data", orc.data, "Dataset directory")->required();
    c_orc->add_option("--max-samples", orc.max_samples, "Samples (0 = all)");
    c_orc->add_option("--out", orc.out, "Output directory");

    VerifyArgs ver;
    auto* c_ver = app.add_subcommand("verify", "Run the property suites");
    c_ver->add_option("--suite", ver.suites, "Suites to run (default all)")
        ->check(CLI::IsMember([] {
            auto names = verify::suite_names();
            names.push_back("all");
            return names;
        }()));
    c_ver->add_option("--cases", ver.cases, "Override case counts (0 = defaults)");
    c_ver->add_option("--seed", ver.seed, "Base seed");
    c_ver->add_option("--out", ver.out, "Output directory");

    ReportArgs rep;
    std::vector<std::uint64_t> dims;
    auto* c_rep = app.add_subcommand("report", "Energy report from a run report and/or the ANN complexity table");
    c_rep->add_option("--run", rep.run, "run_report.json");
    c_rep->add_option("--dims", dims, "N C Nh Ch for a standalone complexity table")->expected(4);
    c_rep->add_option("--out", rep.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*c_toy) return cmd_toy(toy);
        if (*c_cal) return cmd_calibrate(cal);
        if (*c_conv) return cmd_convert(conv);
        if (*c_run) return cmd_run(run);
        if (*c_orc) return cmd_oracle(orc);
        if (*c_ver) return cmd_verify(ver);
        if (*c_rep) {
            if (!dims.empty()) rep.n = dims[0], rep.c = dims[1], rep.heads = dims[2], rep.mlp = dims[3];
            return cmd_report(rep);
        }
    } catch (const ExitError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.code;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kExitIo;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitIo;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
