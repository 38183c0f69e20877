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

// Randomized property suites with independent oracles. Each suite rebuilds
// its expected values by a route that does not share code with the path
// under test (direct products, from-scratch recomputation, a separately
// coded integrate-and-fire simulator, dense reference layers).

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "snnconv/runtime.hpp"

namespace snnconv::verify {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0;
};

namespace detail {

using Rng = std::mt19937_64;

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double sd) {
    std::normal_distribution<double> normal(0.0, sd);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = normal(rng);
    return t;
}

/// Random spike map: each position fires with probability `rate`, channel uniform.
inline SpikeMap random_spikes(Rng& rng, Shape shape, double rate, std::size_t channels) {
    SpikeMap s(std::move(shape));
    for (auto& i : s.index)
        if (uniform(rng, 0, 1) < rate) i = static_cast<SpikeIndex>(uniform_int(rng, 1, channels));
    return s;
}

/// Dense sum_p lambda_p s_p written out independently of spikes_to_values.
inline Tensor<double> dense_from_spikes(const SpikeMap& s, const std::vector<double>& lambda) {
    Tensor<double> x(s.shape);
    for (std::size_t i = 0; i < s.index.size(); ++i)
        for (std::size_t p = 1; p <= lambda.size(); ++p)
            if (s.index[i] == p) x[i] += lambda[p - 1];
    return x;
}

inline Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
    Tensor<double> c({a.dim(0), b.dim(1)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < b.dim(1); ++j) {
            double s = 0;
            for (std::size_t r = 0; r < a.dim(1); ++r) s += a.at(i, r) * b.at(r, j);
            c.at(i, j) = s;
        }
    return c;
}

template <typename Fn>
SuiteResult timed(std::string name, Fn&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult r = body();
    r.name = std::move(name);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

}  // namespace detail

/// Cumulative mean of EC outputs equals F(cumulative mean of inputs).
inline SuiteResult theorem1(std::size_t cases = 1000, std::uint64_t seed = 1) {
    return detail::timed("theorem1", [&] {
        detail::Rng rng(seed);
        double worst = 0;
        for (std::size_t c = 0; c < cases; ++c) {
            const std::size_t rows = detail::uniform_int(rng, 1, 3), width = detail::uniform_int(rng, 1, 64);
            const std::size_t steps = detail::uniform_int(rng, 1, 16);
            Nonlinearity<double> fn;
            switch (c % 3) {
                case 0: fn = GeluFn{}; break;
                case 1: fn = SoftmaxFn<double>{detail::uniform(rng, 0.1, 2.0)}; break;
                default:
                    fn = LayerNormFn<double>{detail::random_tensor(rng, {width}, 1.0),
                                             detail::random_tensor(rng, {width}, 0.5), 1e-6};
            }
            ECState<double> st;
            Tensor<double> in_sum({rows, width}), out_sum({rows, width});
            for (std::size_t t = 1; t <= steps; ++t) {
                const auto x = detail::random_tensor(rng, {rows, width}, 2.0);
                out_sum += ec_step(st, x, fn);
                in_sum += x;
                const double inv = 1.0 / static_cast<double>(t);
                worst = std::max(worst, max_abs_diff(out_sum * inv, apply_nonlinearity(fn, in_sum * inv)));
            }
        }
        return SuiteResult{{}, worst <= 1e-9, "max |mean(O) - F(mean(x))| = " + detail::fmt(worst) + " over " +
                                                   std::to_string(cases) + " cases (tol 1e-9)"};
    });
}

struct Theorem2Outcome {
    SuiteResult identity;
    SuiteResult bounds;
};

/// Matrix-product EC against direct products, plus op counts against the
/// worst-case formula at each step's measured firing rates.
inline Theorem2Outcome theorem2(std::size_t cases = 500, std::uint64_t seed = 2, std::size_t steps = 8) {
    Theorem2Outcome out;
    std::uint64_t bound_steps = 0, violations = 0;
    double worst_add_fraction = 0;
    out.identity = detail::timed("theorem2", [&] {
        detail::Rng rng(seed);
        double sk_err = 0, tele_err = 0, k_err = 0;
        for (std::size_t c = 0; c < cases; ++c) {
            const std::size_t n = detail::uniform_int(rng, 1, 16), p = detail::uniform_int(rng, 1, 16),
                              m = detail::uniform_int(rng, 1, 16);
            const int na = static_cast<int>(detail::uniform_int(rng, 1, 3)), nb = static_cast<int>(detail::uniform_int(rng, 1, 3));
            const auto la = build_ladder(detail::uniform(rng, 0.1, 1.0), detail::uniform(rng, 0.1, 1.0), na);
            const auto lb = build_ladder(detail::uniform(rng, 0.1, 1.0), detail::uniform(rng, 0.1, 1.0), nb);
            const double rate = detail::uniform(rng, 0.0, 1.0);
            MatMulECState<double> st(n, p, m, la, lb);
            Tensor<double> sa({n, p}), sb({p, m}), o_sum({n, m});
            for (std::size_t t = 1; t <= steps; ++t) {
                const auto a = detail::random_spikes(rng, {n, p}, rate, la.channels());
                const auto b = detail::random_spikes(rng, {p, m}, rate, lb.channels());
                const auto ad = detail::dense_from_spikes(a, la.lambda), bd = detail::dense_from_spikes(b, lb.lambda);
                // Three-term expansion with the previous sums.
                const auto k_ref = detail::naive_matmul(ad, bd) + detail::naive_matmul(ad, sb) + detail::naive_matmul(sa, bd);
                o_sum += matmul_ec_step(st, a, b);
                sa += ad;
                sb += bd;
                k_err = std::max(k_err, max_abs_diff(st.last_k(), k_ref));
                const auto direct = detail::naive_matmul(sa, sb);
                sk_err = std::max(sk_err, max_abs_diff(st.s_k(), direct));
                tele_err = std::max(tele_err, max_abs_diff(o_sum, direct * (1.0 / static_cast<double>(t))));

                const auto& r = st.last_ops();
                const auto [adds, muls] = matmul_ec_opcount(r);
                const auto bound = matmul_ec_bounds(r.rate_a(), r.rate_b(), n, p, m);
                ++bound_steps;
                if (static_cast<double>(adds) > bound.acs_max || static_cast<double>(muls) > bound.macs_max) ++violations;
                worst_add_fraction = std::max(worst_add_fraction, static_cast<double>(adds) / bound.acs_max);
            }
        }
        const bool ok = sk_err <= 1e-9 && tele_err <= 1e-9 && k_err <= 1e-12;
        return SuiteResult{{}, ok, "S_K err " + detail::fmt(sk_err) + ", telescoping err " + detail::fmt(tele_err) +
                                       ", K(T) err " + detail::fmt(k_err) + " over " + std::to_string(cases) + " cases"};
    });
    out.bounds = SuiteResult{"bounds", violations == 0,
                             std::to_string(violations) + " of " + std::to_string(bound_steps) +
                                 " steps exceed the op-count bound; max adds/bound = " + detail::fmt(worst_add_fraction),
                             0};
    return out;
}

/// Classic soft-reset IF neuron, membrane initialised to theta / 2.
struct ReferenceIF {
    double theta;
    double v;
    explicit ReferenceIF(double th) : theta(th), v(th / 2) {}
    bool step(double input) {
        const double m = v + input;
        const bool s = m >= theta;
        v = m - (s ? theta : 0.0);
        return s;
    }
};

/// One-hot firing, charge conservation and the n = 1 reduction to plain IF.
inline SuiteResult neuron(std::size_t cases = 10000, std::uint64_t seed = 3) {
    return detail::timed("neuron", [&] {
        detail::Rng rng(seed);
        double cons_err = 0;
        std::size_t onehot_bad = 0, if_bad = 0;
        for (std::size_t c = 0; c < cases; ++c) {
            const int n = static_cast<int>(detail::uniform_int(rng, 1, 4));
            const auto ladder = build_ladder(detail::uniform(rng, 0.1, 2.0), detail::uniform(rng, 0.1, 2.0), n);
            const std::size_t width = detail::uniform_int(rng, 1, 8), steps = detail::uniform_int(rng, 1, 32);
            MTNeuronState<double> st({width}, ladder);
            Tensor<double> in_sum({width}), x_sum({width});
            const double sd = detail::uniform(rng, 0.1, 4.0) * ladder.theta1;
            for (std::size_t t = 0; t < steps; ++t) {
                const auto input = detail::random_tensor(rng, {width}, sd);
                const auto r = mt_step(st, input);
                for (const auto& plane_sum : [&] {
                         std::vector<int> active(width, 0);
                         for (const auto& pl : to_planes(r.spikes, n))
                             for (std::size_t i = 0; i < width; ++i) active[i] += pl[i];
                         return active;
                     }())
                    onehot_bad += plane_sum > 1;
                in_sum += input;
                x_sum += r.x;
            }
            cons_err = std::max(cons_err, max_abs_diff(x_sum + st.v, in_sum));

            // n = 1, non-negative dyadic inputs bounded by theta1, theta2 >= theta1.
            const double theta = std::ldexp(1.0, static_cast<int>(detail::uniform_int(rng, 0, 4)) - 2);
            MTNeuronState<double> mt({1}, build_ladder(theta, theta * (1 + static_cast<double>(c % 2)), 1));
            ReferenceIF ref(theta);
            for (std::size_t t = 0; t < steps; ++t) {
                const double in = theta * static_cast<double>(detail::uniform_int(rng, 0, 64)) / 64.0;
                const auto r = mt_step(mt, Tensor<double>({1}, {in}));
                const bool fired = ref.step(in);
                if ((r.spikes.index[0] == 1) != fired || r.spikes.index[0] > 1 || mt.v[0] != ref.v - theta / 2) ++if_bad;
            }
        }
        const bool ok = onehot_bad == 0 && cons_err <= 1e-12 && if_bad == 0;
        return SuiteResult{{}, ok, "one-hot violations " + std::to_string(onehot_bad) + ", conservation err " +
                                       detail::fmt(cons_err) + ", IF mismatches " + std::to_string(if_bad) + " over " +
                                       std::to_string(cases) + " sequences"};
    });
}

namespace detail {

/// Distance of m to the nearest band boundary of a ladder.
inline double boundary_distance(double m, const ThresholdLadder<double>& l) {
    double d = std::abs(m - l.lambda[0] / 2);
    for (int p = 1; p < l.n; ++p) d = std::min(d, std::abs(m - (l.lambda[p] - l.lambda[0] / 2)));
    d = std::min(d, std::abs(m - l.lambda[l.n] / 2));
    for (int q = 1; q < l.n; ++q) d = std::min(d, std::abs(m - (l.lambda[l.n + q] - l.lambda[l.n] / 2)));
    return d;
}

}  // namespace detail

/// Unnormalized (explicit lambda scaling, thresholds theta1/theta2) versus
/// normalized (weight banks, thresholds 1/eta) linear + neuron pairs.
inline SuiteResult normalization(std::size_t cases = 100, std::uint64_t seed = 4, std::size_t steps = 8) {
    return detail::timed("normalization", [&] {
        detail::Rng rng(seed);
        std::size_t mismatches = 0, resampled = 0, done = 0;
        double lin_err = 0;
        std::uint64_t bad_counts = 0;
        while (done < cases) {
            const std::size_t rows = detail::uniform_int(rng, 1, 4), in = detail::uniform_int(rng, 1, 12),
                              out = detail::uniform_int(rng, 1, 12);
            const int n = static_cast<int>(detail::uniform_int(rng, 1, 4));
            const auto up = build_ladder(detail::uniform(rng, 0.2, 2.0), detail::uniform(rng, 0.2, 2.0), n);
            const auto down = build_ladder(detail::uniform(rng, 0.2, 2.0), detail::uniform(rng, 0.2, 2.0), n);
            const auto w = detail::random_tensor(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
            const auto bias = detail::random_tensor(rng, {out}, 0.3);
            const auto banks = normalize_weights(w, bias, up, down.theta1);
            const auto norm_ladder = build_ladder(1.0, down.theta2 / down.theta1, n);

            MTNeuronState<double> upstream({rows, in}, up), plain({rows, out}, down), normed({rows, out}, norm_ladder);
            Tensor<double> v_ref({rows, out});
            bool safe = true;
            std::size_t case_mismatch = 0;
            double case_lin = 0;
            std::uint64_t case_bad_counts = 0;
            for (std::size_t t = 0; t < steps && safe; ++t) {
                const auto s = mt_step(upstream, detail::random_tensor(rng, {rows, in}, 1.5 * up.theta1)).spikes;
                // (a) explicit lambda multiplication through the dense weights.
                const auto current = linear_forward(detail::dense_from_spikes(s, up.lambda), w, bias);
                for (std::size_t i = 0; i < current.size(); ++i)
                    if (detail::boundary_distance(v_ref[i] + current[i], down) < 1e-9 * down.theta1) safe = false;
                const auto ra = mt_step(plain, current);
                v_ref = plain.v;
                // (b) bank accumulation only.
                std::uint64_t acs = 0;
                const auto nc = spike_linear(banks, s, &acs);
                const auto rb = mt_step(normed, nc);
                case_mismatch += ra.spikes != rb.spikes;
                case_lin = std::max(case_lin, max_abs_diff(nc, current * (1.0 / down.theta1)));
                case_bad_counts += acs != (s.fired() + rows) * out;
            }
            if (!safe) {
                ++resampled;
                continue;
            }
            ++done;
            mismatches += case_mismatch;
            lin_err = std::max(lin_err, case_lin);
            bad_counts += case_bad_counts;
        }
        const bool ok = mismatches == 0 && lin_err <= 1e-12 && bad_counts == 0;
        return SuiteResult{{}, ok, std::to_string(mismatches) + " spike-sequence mismatches, spike_linear err " +
                                       detail::fmt(lin_err) + ", " + std::to_string(bad_counts) +
                                       " steps with unexpected AC counts (0 multiplications on the spike path), " +
                                       std::to_string(resampled) + " boundary cases resampled"};
    });
}

/// Reproduces the per-block complexity table at N=577, C=1408, Nh=16, Ch=6144.
inline SuiteResult table3() {
    return detail::timed("table3", [] {
        // Printed values, in hundredths of a million.
        const long printed[] = {81, 343165, 7149, 533, 46876, 114388, 81, 499148, 354, 499148};
        const auto rows = ann_complexity(577, 1408, 16, 6144);
        std::string detail;
        bool ok = rows.size() == 10;
        for (std::size_t i = 0; i < rows.size() && i < 10; ++i) {
            const long hundredths = std::lround(static_cast<double>(rows[i].macs) / 1e4);
            if (std::abs(hundredths - printed[i]) > 1) {
                ok = false;
                detail += rows[i].module + " " + std::to_string(hundredths) + " vs " + std::to_string(printed[i]) + "; ";
            }
        }
        return SuiteResult{{}, ok, ok ? "all 10 rows within 0.01M" : detail};
    });
}

/// Per-step F versus expectation compensation on x = [+2, -2] with GELU.
inline SuiteResult naive_gap() {
    return detail::timed("naive", [] {
        const std::vector<Tensor<double>> seq{Tensor<double>({1}, {2.0}), Tensor<double>({1}, {-2.0})};
        const auto r = naive_nonlinear_demo<double>([](const Tensor<double>& x) { return gelu(x); }, seq);
        const double gap = std::abs(r.naive[0] - r.reference[0]);
        const double ec_gap = std::abs(r.ec[0] - r.reference[0]);
        return SuiteResult{{}, gap > 0.1 && ec_gap <= 1e-9,
                           "naive " + detail::fmt(r.naive[0]) + ", EC " + detail::fmt(r.ec[0]) + ", reference " +
                               detail::fmt(r.reference[0]) + " (|naive-ref| " + detail::fmt(gap) + ", |EC-ref| " +
                               detail::fmt(ec_gap) + ")"};
    });
}

/// The toy ViT used by the end-to-end checks.
inline ModelConfig toy_config(std::size_t blocks = 2) {
    return ModelConfig{.num_blocks = blocks, .dim = 32, .heads = 4, .mlp_dim = 64, .num_tokens = 17,
                       .num_classes = 10, .in_dim = 16, .patch = PatchSpec{4, 16, 16, 1}};
}

/// Analog-EC-only SNN logits against ANN logits at every step.
template <std::floating_point Real>
SuiteResult end_to_end(std::size_t samples = 64, std::uint64_t seed = 5, double tol = 1e-6) {
    return detail::timed(std::is_same_v<Real, float> ? "e2e_f32" : "e2e_f64", [&] {
        const auto model = make_toy_model<Real>(toy_config(), seed);
        const auto ds = make_toy_dataset(model, samples, seed + 1);
        const auto ts = derive_thresholds(collect_stats(model, ds, samples), 99.0, 8, default_overrides(model.config));
        const auto g = convert(model, ts);
        const std::size_t checkpoints[] = {1, 2, 4, 8};
        const auto run = run_dataset(g, ds, 8, RunMode::analog_ec_only);
        double worst = 0;
        for (auto t : checkpoints) worst = std::max(worst, run.max_logit_error[t - 1]);
        return SuiteResult{{}, worst <= tol && run.agreement[7] == 1.0,
                           "max |SNN - ANN| logit error at T in {1,2,4,8} = " + detail::fmt(worst) + " (tol " +
                               detail::fmt(tol) + ") over " + std::to_string(samples) + " samples"};
    });
}

struct ToyTrendOutcome {
    SuiteResult convergence;
    SuiteResult firing;
    SuiteResult ablation;
    DatasetRun<double> run_n8;
    DatasetRun<double> run_n4;
};

/// MT-mode trends on the toy model: convergence with T, base-threshold
/// dominance of firing, and n = 8 versus n = 4 at T = 4.
inline ToyTrendOutcome toy_trends(std::size_t samples = 256, std::uint64_t seed = 5, std::size_t steps = 32) {
    ToyTrendOutcome out;
    const auto t0 = std::chrono::steady_clock::now();
    const auto model = make_toy_model<double>(toy_config(), seed);
    const auto calib = make_toy_dataset(model, 64, seed + 100);
    const auto eval = make_toy_dataset(model, samples, seed + 200);
    const auto stats = collect_stats(model, calib, calib.size());
    const auto g8 = convert(model, derive_thresholds(stats, 99.0, 8, default_overrides(model.config)));
    const auto g4 = convert(model, derive_thresholds(stats, 99.0, 4, default_overrides(model.config)));
    out.run_n8 = run_dataset(g8, eval, steps, RunMode::mt);
    out.run_n4 = run_dataset(g4, eval, 4, RunMode::mt);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto& r = out.run_n8;
    const double agree4 = r.agreement[3], agree32 = r.agreement[steps - 1];
    const double err2 = r.mean_logit_error[1], err32 = r.mean_logit_error[steps - 1];
    out.convergence = {"convergence", agree32 >= agree4 && err32 <= 0.5 * err2,
                       "agreement T=4 " + detail::fmt(agree4) + ", T=32 " + detail::fmt(agree32) +
                           "; mean logit error T=2 " + detail::fmt(err2) + ", T=32 " + detail::fmt(err32),
                       secs};

    const auto fr = spike_statistics(r.neuron_stats);
    const std::size_t n = 8;
    bool base_ok = fr.aggregate_counts.size() == 2 * n;
    // Both base indices against every higher-power index on either side.
    for (std::size_t p = 1; base_ok && p < n; ++p)
        for (std::size_t base : {std::size_t{0}, n})
            base_ok = base_ok && fr.aggregate_counts[base] >= fr.aggregate_counts[p] &&
                      fr.aggregate_counts[base] >= fr.aggregate_counts[n + p];
    std::string counts;
    for (auto c : fr.aggregate_counts) counts += (counts.empty() ? "" : ",") + std::to_string(c);
    out.firing = {"firing", base_ok, "aggregate fires per index [" + counts + "]", 0};

    const double a8 = r.agreement[3], a4 = out.run_n4.agreement[3];
    out.ablation = {"ablation", a8 >= a4, "agreement at T=4: n=8 " + detail::fmt(a8) + ", n=4 " + detail::fmt(a4), 0};
    return out;
}

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"theorem1", "theorem2", "bounds",  "neuron",      "normalization",
                                                "table3",   "naive",    "e2e",     "convergence", "ablation"};
    return names;
}

/// Runs the named suites ("all" for every one). `cases` of 0 keeps defaults.
inline std::vector<SuiteResult> run_suites(const std::vector<std::string>& names, std::size_t cases = 0,
                                           std::uint64_t seed = 0) {
    auto want = [&](const std::string& s) {
        return std::find(names.begin(), names.end(), s) != names.end() ||
               std::find(names.begin(), names.end(), "all") != names.end();
    };
    auto pick = [&](std::size_t def) { return cases ? cases : def; };
    std::vector<SuiteResult> out;
    if (want("theorem1")) out.push_back(theorem1(pick(1000), seed + 1));
    if (want("theorem2") || want("bounds")) {
        auto t2 = theorem2(pick(500), seed + 2);
        if (want("theorem2")) out.push_back(t2.identity);
        if (want("bounds")) out.push_back(t2.bounds);
    }
    if (want("neuron")) out.push_back(neuron(pick(10000), seed + 3));
    if (want("normalization")) out.push_back(normalization(pick(100), seed + 4));
    if (want("table3")) out.push_back(table3());
    if (want("naive")) out.push_back(naive_gap());
    if (want("e2e")) {
        out.push_back(end_to_end<float>(pick(64), seed + 5, 1e-6));
        out.push_back(end_to_end<double>(pick(64), seed + 5, 1e-12));
    }
    if (want("convergence") || want("ablation")) {
        auto tr = toy_trends(pick(256), seed + 5);
        if (want("convergence")) {
            out.push_back(tr.convergence);
            out.push_back(tr.firing);
        }
        if (want("ablation")) out.push_back(tr.ablation);
    }
    return out;
}

}  // namespace snnconv::verify
