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

// Time-stepped execution of a converted graph.

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "snnconv/convert.hpp"

namespace snnconv {

enum class RunMode {
    mt,              // full spiking dynamics
    analog_ec_only,  // neurons pass their input through; only EC modules act
};

inline const char* to_string(RunMode m) { return m == RunMode::mt ? "mt" : "analog_ec_only"; }

struct NeuronLayerStats {
    std::uint64_t neurons = 0;
    std::uint64_t steps = 0;
    std::vector<std::uint64_t> counts;  // [p] fires of threshold index p; [0] silent
    std::uint64_t saturation_events = 0;

    void merge(const NeuronLayerStats& o) {
        if (counts.empty()) {
            *this = o;
            return;
        }
        neurons = std::max(neurons, o.neurons);
        steps += o.steps;
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
        saturation_events += o.saturation_events;
    }
};

/// Measured matrix-product EC op counts against the worst-case formula.
struct BoundCheck {
    std::uint64_t steps = 0;
    std::uint64_t violations = 0;
    double max_add_fraction = 0;  // measured additions / bound

    void record(const MatMulOpRecord& r) {
        const auto [adds, muls] = matmul_ec_opcount(r);
        const auto b = matmul_ec_bounds(r.rate_a(), r.rate_b(), r.n, r.p, r.m);
        ++steps;
        if (static_cast<double>(adds) > b.acs_max || static_cast<double>(muls) > b.macs_max) ++violations;
        max_add_fraction = std::max(max_add_fraction, static_cast<double>(adds) / b.acs_max);
    }
    void merge(const BoundCheck& o) {
        steps += o.steps;
        violations += o.violations;
        max_add_fraction = std::max(max_add_fraction, o.max_add_fraction);
    }
};

template <std::floating_point Real>
struct RunResult {
    std::vector<Tensor<Real>> logits;     // logits[t - 1] after t steps
    std::vector<std::size_t> predicted;
    std::vector<OpCount> cumulative_ops;  // ledger total after each step
    std::map<std::string, NeuronLayerStats> neuron_stats;
    OpsLedger ledger;
    BoundCheck bounds;
};

namespace detail {

inline SpikeMap slice_cols(const SpikeMap& s, std::size_t begin, std::size_t count) {
    SpikeMap out({s.rows(), count});
    for (std::size_t r = 0; r < s.rows(); ++r)
        for (std::size_t j = 0; j < count; ++j) out.index[r * count + j] = s.at(r, begin + j);
    return out;
}

inline SpikeMap plane(const SpikeMap& s, std::size_t h) {
    const std::size_t n = s.shape[1], m = s.shape[2];
    SpikeMap out({n, m});
    std::copy_n(s.index.begin() + static_cast<std::ptrdiff_t>(h * n * m), n * m, out.index.begin());
    return out;
}

}  // namespace detail

/// Per-sample simulation state for a converted graph. The graph is shared
/// read-only; every instance owns its neuron, EC and matrix-product states.
template <std::floating_point Real>
class SnnInstance {
public:
    SnnInstance(const SnnGraph<Real>& g, RunMode mode) : g_(g), mode_(mode) {
        const auto& cfg = g.config();
        for (const auto& l : g.layers) {
            if (l.kind == SnnKind::ec) {
                const auto& al = g.ann.layer(l.source);
                if (al.kind == LayerKind::gelu)
                    fns_.emplace(l.name, GeluFn{});
                else if (al.kind == LayerKind::softmax)
                    fns_.emplace(l.name, SoftmaxFn<Real>{static_cast<Real>(al.scale)});
                else
                    fns_.emplace(l.name, LayerNormFn<Real>{g.ann.weight(al.weight), g.ann.weight(al.bias),
                                                           static_cast<Real>(cfg.ln_eps)});
            }
        }
        head_sum_ = Tensor<accum_t<Real>>({cfg.dim});
    }

    std::uint64_t t() const { return t_; }
    const OpsLedger& ledger() const { return ledger_; }
    const BoundCheck& bounds() const { return bounds_; }

    std::map<std::string, NeuronLayerStats> neuron_stats() const {
        std::map<std::string, NeuronLayerStats> out;
        for (const auto& [site, st] : neurons_)
            out[site] = {st.neurons(), st.steps, st.spike_counts, st.saturation_events};
        return out;
    }

    /// Advances one time step with the static input presented again; returns
    /// the head logits for the running mean of the CLS feature.
    Tensor<Real> step(const Tensor<Real>& tokens) {
        ++t_;
        const auto& cfg = g_.config();
        const std::size_t d = cfg.head_dim();
        std::map<std::string, Tensor<Real>> acts;
        std::map<std::string, SpikeMap> spikes;
        acts.emplace("tokens", tokens);
        Tensor<Real> logits;

        for (const auto& l : g_.layers) {
            Tensor<Real> y;
            switch (l.kind) {
                case SnnKind::mt_neuron: {
                    Tensor<Real> in = fetch_operand(acts, l.inputs[0]);
                    if (mode_ == RunMode::analog_ec_only) {
                        acts.insert_or_assign(l.spikes_out, std::move(in));
                        continue;
                    }
                    auto it = neurons_.find(l.name);
                    if (it == neurons_.end())
                        it = neurons_.emplace(l.name, MTNeuronState<Real>(in.shape(), g_.neurons.at(l.name).dynamics_ladder())).first;
                    auto r = mt_step(it->second, in);
                    ledger_.add(l.name, ModuleClass::neuron, in.size() + r.spikes.fired(), 0);
                    spikes.insert_or_assign(l.spikes_out, std::move(r.spikes));
                    continue;
                }
                case SnnKind::spike_linear: {
                    const auto& al = g_.ann.layer(l.source);
                    if (mode_ == RunMode::analog_ec_only) {
                        const auto& x = acts.at(l.spikes_in[0]);
                        const auto& w = g_.ann.weight(al.weight);
                        y = linear_forward(x, w, g_.ann.weight(al.bias));
                        ledger_.add(l.name, ModuleClass::linear, y.size(), x.rows() * w.dim(0) * w.dim(1));
                    } else {
                        std::uint64_t acs = 0;
                        y = spike_linear(g_.linears.at(l.name), spikes.at(l.spikes_in[0]), &acs);
                        ledger_.add(l.name, ModuleClass::linear, acs, 0);
                    }
                    break;
                }
                case SnnKind::prepend_cls: {
                    const auto& patches = acts.at(l.inputs[0].tensor);
                    const auto& cls = g_.ann.weight(g_.ann.layer(l.source).extra);
                    y = Tensor<Real>({cfg.num_tokens, cfg.dim});
                    std::copy(cls.vec().begin(), cls.vec().end(), y.data());
                    std::copy(patches.vec().begin(), patches.vec().end(), y.data() + cfg.dim);
                    break;
                }
                case SnnKind::pos_add:
                    y = fetch_operand(acts, l.inputs[0]) + g_.ann.weight(g_.ann.layer(l.source).weight);
                    ledger_.add(l.name, ModuleClass::analog, y.size(), 0);
                    break;
                case SnnKind::residual_add:
                    y = fetch_operand(acts, l.inputs[0]) + fetch_operand(acts, l.inputs[1]);
                    ledger_.add(l.name, ModuleClass::analog, y.size(), 0);
                    break;
                case SnnKind::ec: {
                    const Tensor<Real> x = fetch_operand(acts, l.inputs[0]);
                    y = ec_step(ecs_[l.name], x, fns_.at(l.name));
                    ledger_.add(l.name, ModuleClass::nonlinear, 2 * x.size(), x.size());
                    break;
                }
                case SnnKind::matmul_ec:
                    y = matmul_step(l, acts, spikes, d);
                    break;
                case SnnKind::analog_head: {
                    const auto& x = acts.at(l.inputs[0].tensor);
                    const auto& al = g_.ann.layer(l.source);
                    Tensor<Real> mean({1, cfg.dim});
                    for (std::size_t j = 0; j < cfg.dim; ++j) {
                        head_sum_[j] += x.at(0, j);
                        mean[j] = static_cast<Real>(head_sum_[j] / static_cast<accum_t<Real>>(t_));
                    }
                    logits = linear_forward(mean, g_.ann.weight(al.weight), g_.ann.weight(al.bias)).reshaped({cfg.num_classes});
                    ledger_.add(l.name, ModuleClass::head, cfg.dim + cfg.num_classes, cfg.dim * cfg.num_classes + cfg.dim);
                    y = logits;
                    break;
                }
            }
            if (!y.all_finite()) throw NumericError("non-finite activation after '" + l.name + "' at step " + std::to_string(t_));
            acts.insert_or_assign(l.output, std::move(y));
        }
        return logits;
    }

private:
    Tensor<Real> matmul_step(const SnnLayerSpec& l, const std::map<std::string, Tensor<Real>>& acts,
                             const std::map<std::string, SpikeMap>& spikes, std::size_t d) {
        const auto& cfg = g_.config();
        const auto& al = g_.ann.layer(l.source);
        const bool qk = al.mode == MatMulMode::query_key;
        const std::size_t nt = cfg.num_tokens;
        auto& heads = matmuls_[l.name];
        const bool analog = mode_ == RunMode::analog_ec_only;
        if (heads.empty()) {
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                const std::size_t n = nt, p = qk ? d : nt, m = qk ? nt : d;
                if (analog)
                    heads.emplace_back(n, p, m);
                else
                    heads.emplace_back(n, p, m, g_.neurons.at(al.sites()[0]).ladder, g_.neurons.at(al.sites()[1]).ladder);
            }
        }
        Tensor<Real> y = qk ? Tensor<Real>({cfg.heads, nt, nt}) : Tensor<Real>({nt, cfg.dim});
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            Tensor<Real> o;
            if (analog) {
                const auto& a = acts.at(l.spikes_in[0]);
                const auto& b = acts.at(l.spikes_in[1]);
                o = qk ? heads[h].step_dense(head_cols(a, h, d), transpose(head_cols(b, h, d)))
                       : heads[h].step_dense(head_plane(a, h), head_cols(b, h, d));
            } else {
                const auto& a = spikes.at(l.spikes_in[0]);
                const auto& b = spikes.at(l.spikes_in[1]);
                o = qk ? heads[h].step(detail::slice_cols(a, h * d, d), transpose(detail::slice_cols(b, h * d, d)))
                       : heads[h].step(detail::plane(a, h), detail::slice_cols(b, h * d, d));
                bounds_.record(heads[h].last_ops());
            }
            const auto& r = heads[h].last_ops();
            ledger_.add(l.name, ModuleClass::matmul, r.spike_adds + r.merge_adds + r.state_adds,
                        r.multiplications + r.readout_muls);
            if (qk)
                set_head_plane(y, h, o);
            else
                assign_cols(y, h * d, o);
        }
        return y;
    }

    const SnnGraph<Real>& g_;
    RunMode mode_;
    std::uint64_t t_ = 0;
    std::map<std::string, Nonlinearity<Real>> fns_;
    std::map<std::string, MTNeuronState<Real>> neurons_;
    std::map<std::string, ECState<Real>> ecs_;
    std::map<std::string, std::vector<MatMulECState<Real>>> matmuls_;
    Tensor<accum_t<Real>> head_sum_;
    OpsLedger ledger_;
    BoundCheck bounds_;
};

template <std::floating_point Real>
RunResult<Real> snn_run(const SnnGraph<Real>& g, const Tensor<Real>& tokens, std::size_t steps, RunMode mode) {
    if (steps < 1) throw DomainError("snn_run: need at least one time step");
    const auto& cfg = g.config();
    if (tokens.rank() != 2 || tokens.dim(0) != cfg.num_patches() || tokens.dim(1) != cfg.in_dim)
        throw DimensionError("snn_run: tokens " + shape_str(tokens.shape()) + " do not match the model input");
    SnnInstance<Real> inst(g, mode);
    RunResult<Real> r;
    for (std::size_t t = 0; t < steps; ++t) {
        r.logits.push_back(inst.step(tokens));
        r.predicted.push_back(argmax<Real>(r.logits.back().values()));
        r.cumulative_ops.push_back(inst.ledger().total());
    }
    r.ledger = inst.ledger();
    r.neuron_stats = inst.neuron_stats();
    r.bounds = inst.bounds();
    return r;
}

struct FiringRates {
    std::map<std::string, std::vector<double>> per_layer;  // [p - 1] rate of index p
    std::vector<double> aggregate;
    std::vector<std::uint64_t> aggregate_counts;  // [p - 1] fires of index p over all layers
};

/// Fraction of neuron-steps firing each threshold index, per layer and pooled.
inline FiringRates spike_statistics(const std::map<std::string, NeuronLayerStats>& stats) {
    FiringRates fr;
    std::uint64_t total_neuron_steps = 0;
    for (const auto& [site, s] : stats) {
        const double denom = static_cast<double>(s.neurons * s.steps);
        std::vector<double> rates(s.counts.size() - 1, 0.0);
        if (fr.aggregate_counts.size() < rates.size()) fr.aggregate_counts.resize(rates.size(), 0);
        for (std::size_t p = 1; p < s.counts.size(); ++p) {
            rates[p - 1] = denom > 0 ? static_cast<double>(s.counts[p]) / denom : 0.0;
            fr.aggregate_counts[p - 1] += s.counts[p];
        }
        total_neuron_steps += s.neurons * s.steps;
        fr.per_layer[site] = std::move(rates);
    }
    for (auto c : fr.aggregate_counts)
        fr.aggregate.push_back(total_neuron_steps ? static_cast<double>(c) / static_cast<double>(total_neuron_steps) : 0.0);
    return fr;
}

template <std::floating_point Real>
FiringRates spike_statistics(const RunResult<Real>& r) {
    return spike_statistics(r.neuron_stats);
}

template <std::floating_point Real>
struct NaiveDemo {
    Tensor<Real> naive;      // mean of F(x(t))
    Tensor<Real> ec;         // mean of EC outputs
    Tensor<Real> reference;  // F(mean of x(t))
};

/// Contrasts applying F per step against expectation compensation.
template <std::floating_point Real, typename Fn>
NaiveDemo<Real> naive_nonlinear_demo(Fn&& f, const std::vector<Tensor<Real>>& seq) {
    if (seq.size() < 2) throw DomainError("naive_nonlinear_demo: sequence needs at least two steps");
    const Real inv = Real(1) / static_cast<Real>(seq.size());
    Tensor<Real> naive(seq[0].shape()), ec(seq[0].shape()), mean(seq[0].shape());
    ECState<Real> st;
    for (const auto& x : seq) {
        naive += f(x);
        ec += ec_step(st, x, f);
        mean += x;
    }
    return {naive * inv, ec * inv, f(mean * inv)};
}

/// Aggregated outcome of running many samples.
template <std::floating_point Real>
struct DatasetRun {
    std::size_t samples = 0;
    std::size_t steps = 0;
    std::vector<double> agreement;         // per step: SNN top-1 == ANN top-1
    std::vector<double> accuracy;          // per step: SNN top-1 == label
    std::vector<double> mean_logit_error;  // per step: mean |SNN - ANN| over samples and classes
    std::vector<double> max_logit_error;   // per step
    std::vector<OpCount> ops_per_sample;   // cumulative ops through each step, averaged per sample
    double ann_accuracy = 0;
    OpsLedger ledger;                      // summed over samples
    std::map<std::string, NeuronLayerStats> neuron_stats;
    BoundCheck bounds;
};

template <std::floating_point Real>
DatasetRun<Real> run_dataset(const SnnGraph<Real>& g, const Dataset<Real>& ds, std::size_t steps, RunMode mode,
                             std::size_t max_samples = 0, unsigned workers = 0) {
    const std::size_t count = max_samples ? std::min(max_samples, ds.size()) : ds.size();
    if (count == 0) throw DomainError("run_dataset: no samples");
    if (steps < 1) throw DomainError("run_dataset: need at least one time step");
    struct Item {
        Tensor<Real> ann_logits;
        std::optional<RunResult<Real>> snn;
    };
    std::vector<Item> items(count);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors;
    std::mutex err_mu;
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                items[i].ann_logits = ann_forward(g.ann, ds.samples[i]).logits;
                items[i].snn = snn_run(g, ds.samples[i], steps, mode);
            } catch (...) {
                std::lock_guard lock(err_mu);
                errors.push_back(std::current_exception());
            }
        }
    };
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (!errors.empty()) std::rethrow_exception(errors.front());

    // Merge in sample order so results do not depend on scheduling.
    DatasetRun<Real> out;
    out.samples = count;
    out.steps = steps;
    out.agreement.assign(steps, 0);
    out.accuracy.assign(steps, 0);
    out.mean_logit_error.assign(steps, 0);
    out.max_logit_error.assign(steps, 0);
    std::vector<double> acs(steps, 0), macs(steps, 0);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& it = items[i];
        const std::size_t ann_top = argmax<Real>(it.ann_logits.values());
        out.ann_accuracy += static_cast<double>(static_cast<int>(ann_top) == ds.labels[i]);
        for (std::size_t t = 0; t < steps; ++t) {
            const auto& lg = it.snn->logits[t];
            out.agreement[t] += it.snn->predicted[t] == ann_top;
            out.accuracy[t] += static_cast<int>(it.snn->predicted[t]) == ds.labels[i];
            double err = 0;
            for (std::size_t c = 0; c < lg.size(); ++c) {
                const double e = std::abs(static_cast<double>(lg[c]) - static_cast<double>(it.ann_logits[c]));
                err += e;
                out.max_logit_error[t] = std::max(out.max_logit_error[t], e);
            }
            out.mean_logit_error[t] += err / static_cast<double>(lg.size());
            acs[t] += static_cast<double>(it.snn->cumulative_ops[t].acs);
            macs[t] += static_cast<double>(it.snn->cumulative_ops[t].macs);
        }
        out.ledger.merge(it.snn->ledger);
        for (const auto& [site, s] : it.snn->neuron_stats) out.neuron_stats[site].merge(s);
        out.bounds.merge(it.snn->bounds);
    }
    const double n = static_cast<double>(count);
    out.ann_accuracy /= n;
    for (std::size_t t = 0; t < steps; ++t) {
        out.agreement[t] /= n;
        out.accuracy[t] /= n;
        out.mean_logit_error[t] /= n;
        out.ops_per_sample.push_back({static_cast<std::uint64_t>(std::llround(acs[t] / n)),
                                      static_cast<std::uint64_t>(std::llround(macs[t] / n))});
    }
    return out;
}

}  // namespace snnconv
