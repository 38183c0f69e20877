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

// Expectation compensation modules.
//
// A general EC module wraps a nonlinear F and emits, at step T,
//   O(T) = T * F(S(T) / T) - (T - 1) * F(S(T-1) / (T-1)),
// where S is the running sum of its inputs, so that the mean of its outputs
// over 1..T equals F of the mean of its inputs. The T = 1 step has no second
// term.
//
// The matrix-product module keeps S_A, S_B and S_K = S_A * S_B and emits
// O(T) = S_K(T) / T - S_K(T-1) / (T-1), updating S_K from the spikes of the
// current step only.

#include <cstdint>
#include <utility>
#include <vector>

#include "snnconv/neuron.hpp"

namespace snnconv {

template <std::floating_point Real>
struct ECState {
    Tensor<accum_t<Real>> sum;     // S(T)
    Tensor<accum_t<Real>> prev_f;  // F(S(T-1) / (T-1))
    std::uint64_t t = 0;
};

template <std::floating_point Real, typename Fn>
    requires std::invocable<Fn&, const Tensor<Real>&>
Tensor<Real> ec_step(ECState<Real>& st, const Tensor<Real>& x, Fn&& f) {
    using Acc = accum_t<Real>;
    if (st.t == 0) {
        st.sum = Tensor<Acc>(x.shape());
    } else if (x.shape() != st.sum.shape()) {
        throw StateError("ec_step: input shape " + shape_str(x.shape()) + " differs from " +
                         shape_str(st.sum.shape()));
    }
    const std::uint64_t big_t = ++st.t;
    const Acc tt = static_cast<Acc>(big_t);
    for (std::size_t i = 0; i < x.size(); ++i) st.sum[i] += x[i];
    Tensor<Real> mean(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) mean[i] = static_cast<Real>(st.sum[i] / tt);
    Tensor<Acc> cur = tensor_cast<Acc>(Tensor<Real>(f(mean)));
    Tensor<Real> out(cur.shape());
    for (std::size_t i = 0; i < cur.size(); ++i)
        out[i] = static_cast<Real>(big_t > 1 ? cur[i] * tt - st.prev_f[i] * (tt - 1) : cur[i]);
    st.prev_f = std::move(cur);
    return out;
}

template <std::floating_point Real>
Tensor<Real> ec_step(ECState<Real>& st, const Tensor<Real>& x, const Nonlinearity<Real>& fn) {
    return ec_step(st, x, [&](const Tensor<Real>& a) { return apply_nonlinearity(fn, a); });
}

/// Scalar operation counts of one matrix-product EC step.
struct MatMulOpRecord {
    std::size_t n = 0, p = 0, m = 0;  // S_A is n x p, S_B is p x m
    std::uint64_t fired_a = 0, fired_b = 0;
    std::uint64_t spike_adds = 0;   // spike-driven accumulations building K(T)
    std::uint64_t merge_adds = 0;   // S_K update and output difference
    std::uint64_t multiplications = 0;  // multiplications inside the K(T) evaluation
    std::uint64_t state_adds = 0;   // S_A / S_B and their threshold-scaled copies
    std::uint64_t readout_muls = 0; // 1/T and 1/(T-1) scaling of the output
    bool skipped = false;           // silent step, K(T) not evaluated

    double rate_a() const { return n * p != 0 ? static_cast<double>(fired_a) / static_cast<double>(n * p) : 0.0; }
    double rate_b() const { return p * m != 0 ? static_cast<double>(fired_b) / static_cast<double>(p * m) : 0.0; }
};

/// (additions, multiplications) spent on K(T) plus the output merge.
inline std::pair<std::uint64_t, std::uint64_t> matmul_ec_opcount(const MatMulOpRecord& r) {
    return {r.spike_adds + r.merge_adds, r.multiplications};
}

template <std::floating_point Real>
class MatMulECState {
    using Acc = accum_t<Real>;

public:
    /// Spiking operands with fixed ladders.
    MatMulECState(std::size_t n, std::size_t p, std::size_t m, ThresholdLadder<Real> la, ThresholdLadder<Real> lb)
        : n_(n), p_(p), m_(m), la_(std::move(la)), lb_(std::move(lb)), spiking_(true),
          s_a_({n, p}), s_b_({p, m}), s_k_({n, m}), last_k_({n, m}) {
        for (std::size_t q = 0; q < la_.channels(); ++q) sb_scaled_.emplace_back(Shape{p, m});
        for (std::size_t r = 0; r < lb_.channels(); ++r) sa_scaled_.emplace_back(Shape{n, p});
        product_.resize(la_.channels() * lb_.channels());
        for (std::size_t q = 0; q < la_.channels(); ++q)
            for (std::size_t r = 0; r < lb_.channels(); ++r)
                product_[q * lb_.channels() + r] = static_cast<Acc>(la_.lambda[q]) * lb_.lambda[r];
    }

    /// Analog operands (dense path).
    MatMulECState(std::size_t n, std::size_t p, std::size_t m)
        : n_(n), p_(p), m_(m), spiking_(false), s_a_({n, p}), s_b_({p, m}), s_k_({n, m}), last_k_({n, m}) {}

    const Tensor<Acc>& s_a() const { return s_a_; }
    const Tensor<Acc>& s_b() const { return s_b_; }
    const Tensor<Acc>& s_k() const { return s_k_; }
    const Tensor<Acc>& last_k() const { return last_k_; }
    const MatMulOpRecord& last_ops() const { return ops_; }
    std::uint64_t t() const { return t_; }
    const ThresholdLadder<Real>& ladder_a() const { return la_; }
    const ThresholdLadder<Real>& ladder_b() const { return lb_; }

    /// One step from spike maps A (n x p) and B (p x m).
    ///
    /// K(T) = A(T) S_B(T-1) + S_A(T-1) B(T) + A(T) B(T) is evaluated as
    /// A(T) S_B(T) + S_A(T-1) B(T). Threshold-scaled copies lambda * S_B and
    /// lambda * S_A are kept up to date from the 2n x 2n product table, so
    /// every fired input costs one row or column of additions and no
    /// multiplications.
    Tensor<Real> step(const SpikeMap& a, const SpikeMap& b) {
        if (!spiking_) throw StateError("matmul EC: spike step on an analog module");
        if (a.shape != Shape{n_, p_} || b.shape != Shape{p_, m_})
            throw StateError("matmul EC: operands " + shape_str(a.shape) + " x " + shape_str(b.shape) +
                             " do not conform to " + shape_str({n_, p_}) + " x " + shape_str({p_, m_}));
        check_indices(a, la_);
        check_indices(b, lb_);
        begin_step(a.fired(), b.fired());
        last_k_.fill(0);
        if (ops_.skipped) return finish_step();

        const std::size_t cb = lb_.channels();
        // S_A(T-1) B(T): a column of adds per fired B entry.
        for (std::size_t k = 0; k < p_; ++k)
            for (std::size_t j = 0; j < m_; ++j) {
                const SpikeIndex r = b.index[k * m_ + j];
                if (!r) continue;
                const Tensor<Acc>& sa = sa_scaled_[r - 1];
                for (std::size_t i = 0; i < n_; ++i) last_k_.at(i, j) += sa.at(i, k);
                ops_.spike_adds += n_;
            }
        // Fold B(T) into S_B and its scaled copies.
        for (std::size_t k = 0; k < p_; ++k)
            for (std::size_t j = 0; j < m_; ++j) {
                const SpikeIndex r = b.index[k * m_ + j];
                if (!r) continue;
                s_b_.at(k, j) += lb_.lambda[r - 1];
                for (std::size_t q = 0; q < sb_scaled_.size(); ++q) sb_scaled_[q].at(k, j) += product_[q * cb + r - 1];
                ops_.state_adds += 1 + sb_scaled_.size();
            }
        // A(T) S_B(T): a row of adds per fired A entry.
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t k = 0; k < p_; ++k) {
                const SpikeIndex q = a.index[i * p_ + k];
                if (!q) continue;
                auto src = sb_scaled_[q - 1].row(k);
                auto dst = last_k_.row(i);
                for (std::size_t j = 0; j < m_; ++j) dst[j] += src[j];
                ops_.spike_adds += m_;
            }
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t k = 0; k < p_; ++k) {
                const SpikeIndex q = a.index[i * p_ + k];
                if (!q) continue;
                s_a_.at(i, k) += la_.lambda[q - 1];
                for (std::size_t r = 0; r < sa_scaled_.size(); ++r)
                    sa_scaled_[r].at(i, k) += product_[(q - 1) * cb + r];
                ops_.state_adds += 1 + sa_scaled_.size();
            }
        return finish_step();
    }

    /// One step from analog operands; K(T) by dense products.
    Tensor<Real> step_dense(const Tensor<Real>& a, const Tensor<Real>& b) {
        if (spiking_) throw StateError("matmul EC: dense step on a spiking module");
        if (a.shape() != Shape{n_, p_} || b.shape() != Shape{p_, m_})
            throw StateError("matmul EC: operands " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                             " do not conform");
        begin_step(n_ * p_, p_ * m_);
        ops_.skipped = false;
        const auto ad = tensor_cast<Acc>(a), bd = tensor_cast<Acc>(b);
        last_k_ = matmul(s_a_, bd);
        s_b_ += bd;
        last_k_ += matmul(ad, s_b_);
        s_a_ += ad;
        ops_.multiplications = 2 * n_ * p_ * m_;
        ops_.spike_adds = 2 * n_ * p_ * m_;
        ops_.state_adds = n_ * p_ + p_ * m_;
        return finish_step();
    }

private:
    static void check_indices(const SpikeMap& s, const ThresholdLadder<Real>& l) {
        for (auto i : s.index)
            if (i > l.channels()) throw StateError("matmul EC: spike index beyond ladder");
    }

    void begin_step(std::size_t fired_a, std::size_t fired_b) {
        ops_ = MatMulOpRecord{};
        ops_.n = n_, ops_.p = p_, ops_.m = m_;
        ops_.fired_a = fired_a;
        ops_.fired_b = fired_b;
        ops_.skipped = fired_a == 0 && fired_b == 0;
        ++t_;
    }

    Tensor<Real> finish_step() {
        const Acc tt = static_cast<Acc>(t_);
        Tensor<Real> out({n_, m_});
        if (t_ == 1) {
            s_k_ += last_k_;
            out = tensor_cast<Real>(s_k_);
            ops_.merge_adds = ops_.skipped ? 0 : n_ * m_;
            return out;
        }
        const Acc inv_t = Acc(1) / tt, inv_prev = Acc(1) / (tt - Acc(1));
        for (std::size_t i = 0; i < s_k_.size(); ++i) {
            const Acc prev = s_k_[i];
            if (!ops_.skipped) s_k_[i] = prev + last_k_[i];
            out[i] = static_cast<Real>(s_k_[i] * inv_t - prev * inv_prev);
        }
        ops_.merge_adds = ops_.skipped ? 0 : 2 * n_ * m_;
        ops_.readout_muls = 2 * n_ * m_;
        return out;
    }

    std::size_t n_, p_, m_;
    ThresholdLadder<Real> la_, lb_;
    bool spiking_;
    Tensor<Acc> s_a_, s_b_, s_k_, last_k_;
    std::vector<Tensor<Acc>> sb_scaled_;  // lambda_a[q] * S_B
    std::vector<Tensor<Acc>> sa_scaled_;  // lambda_b[r] * S_A
    std::vector<Acc> product_;            // lambda_a[q] * lambda_b[r]
    std::uint64_t t_ = 0;
    MatMulOpRecord ops_;
};

template <std::floating_point Real>
Tensor<Real> matmul_ec_step(MatMulECState<Real>& st, const SpikeMap& a, const SpikeMap& b) {
    return st.step(a, b);
}

}  // namespace snnconv
