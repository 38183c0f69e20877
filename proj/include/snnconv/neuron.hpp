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

// Multi-threshold integrate-and-fire neuron with reset by subtraction.
//
// A ladder holds 2n signed thresholds: theta1 * 2^(p-1) for p = 1..n and
// -theta2 * 2^(p-1) for p = n+1..2n. Each step a neuron fires at most one of
// them, chosen by the band the membrane potential falls into.

#include <cstdint>
#include <vector>

#include "snnconv/tensor.hpp"

namespace snnconv {

/// Spike channel per neuron: 0 = silent, 1..2n = fired threshold index.
using SpikeIndex = std::uint8_t;

inline constexpr int kMaxThresholdPairs = 127;

template <std::floating_point Real>
struct ThresholdLadder {
    int n = 1;
    Real theta1 = 1;
    Real theta2 = 1;
    std::vector<Real> lambda;  // lambda[p - 1] is threshold p

    Real value(SpikeIndex p) const { return p == 0 ? Real{0} : lambda[p - 1]; }
    std::size_t channels() const { return lambda.size(); }
    Real top() const { return lambda[n - 1]; }
    Real bottom() const { return lambda[2 * n - 1]; }

    bool operator==(const ThresholdLadder&) const = default;
};

template <std::floating_point Real>
ThresholdLadder<Real> build_ladder(Real theta1, Real theta2, int n) {
    if (!(theta1 > 0) || !(theta2 > 0)) throw DomainError("ladder thresholds must be positive");
    if (n < 1 || n > kMaxThresholdPairs) throw DomainError("ladder needs 1 <= n <= 127");
    ThresholdLadder<Real> l{n, theta1, theta2, std::vector<Real>(2 * static_cast<std::size_t>(n))};
    Real scale = 1;
    for (int p = 0; p < n; ++p, scale *= 2) {
        l.lambda[p] = scale * theta1;
        l.lambda[n + p] = -scale * theta2;
    }
    return l;
}

/// Band selection. Bounds are half-open (lower inclusive), with the positive
/// bands offset by lambda_1 / 2 and the negative ones by lambda_{n+1} / 2.
template <std::floating_point Real>
SpikeIndex mth(Real m, const ThresholdLadder<Real>& ladder) {
    const int n = ladder.n;
    const auto& lam = ladder.lambda;
    const Real half_pos = lam[0] / 2;
    const Real half_neg = lam[n] / 2;
    if (m >= half_pos) {
        int p = 1;
        while (p < n && m >= lam[p] - half_pos) ++p;
        return static_cast<SpikeIndex>(p);
    }
    if (m >= half_neg) return 0;
    int q = 1;
    while (q < n && m < lam[n + q] - half_neg) ++q;
    return static_cast<SpikeIndex>(n + q);
}

/// Spike indices for a tensor of neurons, same shape as the state.
struct SpikeMap {
    Shape shape;
    std::vector<SpikeIndex> index;

    SpikeMap() = default;
    explicit SpikeMap(Shape s) : shape(std::move(s)), index(shape_size(shape), 0) {}

    std::size_t cols() const { return shape.back(); }
    std::size_t rows() const { return index.size() / cols(); }
    SpikeIndex at(std::size_t r, std::size_t c) const { return index[r * cols() + c]; }

    std::size_t fired() const {
        std::size_t k = 0;
        for (auto i : index) k += i != 0;
        return k;
    }

    bool operator==(const SpikeMap&) const = default;
};

/// Postsynaptic values sum_p s_p * lambda_p for a spike map.
template <std::floating_point Real>
Tensor<Real> spikes_to_values(const SpikeMap& s, const ThresholdLadder<Real>& ladder) {
    Tensor<Real> x(s.shape);
    for (std::size_t i = 0; i < s.index.size(); ++i) x[i] = ladder.value(s.index[i]);
    return x;
}

/// Expands to 2n binary planes, plane p - 1 holding s_p.
inline std::vector<std::vector<std::uint8_t>> to_planes(const SpikeMap& s, int n) {
    std::vector<std::vector<std::uint8_t>> planes(2 * static_cast<std::size_t>(n),
                                                  std::vector<std::uint8_t>(s.index.size(), 0));
    for (std::size_t i = 0; i < s.index.size(); ++i)
        if (s.index[i]) planes[s.index[i] - 1][i] = 1;
    return planes;
}

/// Inverse of to_planes; rejects neurons with more than one active plane.
inline SpikeMap from_planes(const std::vector<std::vector<std::uint8_t>>& planes, Shape shape) {
    SpikeMap s(std::move(shape));
    for (std::size_t p = 0; p < planes.size(); ++p)
        for (std::size_t i = 0; i < planes[p].size(); ++i)
            if (planes[p][i]) {
                if (s.index[i]) throw DomainError("spike planes are not one-hot");
                s.index[i] = static_cast<SpikeIndex>(p + 1);
            }
    return s;
}

/// Transposes a 2-D spike map.
inline SpikeMap transpose(const SpikeMap& s) {
    const std::size_t r = s.rows(), c = s.cols();
    SpikeMap t({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t.index[j * r + i] = s.index[i * c + j];
    return t;
}

template <std::floating_point Real>
struct MTNeuronState {
    Tensor<Real> v;
    ThresholdLadder<Real> ladder;
    std::vector<std::uint64_t> spike_counts;  // [0] silent neuron-steps, [p] fires of index p
    std::uint64_t steps = 0;
    std::uint64_t saturation_events = 0;  // |v| beyond twice the outermost threshold after firing

    MTNeuronState(Shape shape, ThresholdLadder<Real> l)
        : v(std::move(shape)), ladder(std::move(l)), spike_counts(ladder.channels() + 1, 0) {}

    std::size_t neurons() const { return v.size(); }
};

template <std::floating_point Real>
struct MtStepResult {
    Tensor<Real> x;
    SpikeMap spikes;
};

template <std::floating_point Real>
MtStepResult<Real> mt_step(MTNeuronState<Real>& st, const Tensor<Real>& input) {
    if (input.shape() != st.v.shape())
        throw DimensionError("mt_step: input " + shape_str(input.shape()) + " vs state " + shape_str(st.v.shape()));
    if (!input.all_finite()) throw NumericError("mt_step: non-finite input current");
    MtStepResult<Real> r{Tensor<Real>(input.shape()), SpikeMap(input.shape())};
    const Real hi = 2 * st.ladder.top(), lo = 2 * st.ladder.bottom();
    for (std::size_t i = 0; i < input.size(); ++i) {
        const Real m = st.v[i] + input[i];
        const SpikeIndex s = mth(m, st.ladder);
        const Real x = st.ladder.value(s);
        st.v[i] = m - x;
        r.x[i] = x;
        r.spikes.index[i] = s;
        ++st.spike_counts[s];
        if (s && (st.v[i] > hi || st.v[i] < lo)) ++st.saturation_events;
    }
    ++st.steps;
    return r;
}

}  // namespace snnconv
