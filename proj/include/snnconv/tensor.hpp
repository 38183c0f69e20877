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

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "snnconv/errors.hpp"

namespace snnconv {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major tensor. The scalar type fixes the simulation precision.
template <std::floating_point Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real{0}) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (shape_size(shape_) != data_.size())
            throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " values");
    }

    /// Construction path for values coming from files or callers: rejects NaN/Inf.
    static Tensor from_external(Shape shape, std::vector<Real> data) {
        Tensor t(std::move(shape), std::move(data));
        if (!t.all_finite()) throw NumericError("non-finite value in external tensor input");
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // 2-D helpers; leading dims are folded into rows for rank > 2.
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }
    const std::vector<Real>& vec() const noexcept { return data_; }

    Real& operator[](std::size_t i) noexcept { return data_[i]; }
    const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

    Real& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const Real& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const Real> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols(), cols()};
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(Real s) noexcept {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, Real s) { return a *= s; }
    friend Tensor operator*(Real s, Tensor a) { return a *= s; }

    bool operator==(const Tensor&) const = default;

private:
    void check_shape() const {
        if (shape_.empty()) throw DimensionError("tensor needs at least one dimension");
    }
    void require_same_shape(const Tensor& o, const char* op) const {
        if (shape_ != o.shape_)
            throw DimensionError(std::string("shape mismatch in ") + op + ": " + shape_str(shape_) +
                                 " vs " + shape_str(o.shape_));
    }

    Shape shape_;
    std::vector<Real> data_;
};

template <std::floating_point To, std::floating_point From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    std::vector<To> out(t.vec().begin(), t.vec().end());
    return Tensor<To>(t.shape(), std::move(out));
}

template <std::floating_point Real>
Real max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Real m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Accumulator type for reductions and running sums; f32 accumulates in f64.
template <std::floating_point Real>
using accum_t = std::conditional_t<(sizeof(Real) < sizeof(double)), double, Real>;

/// c = a * b for 2-D operands.
template <std::floating_point Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    using Acc = accum_t<Real>;
    Tensor<Real> c({m, n});
    std::vector<Acc> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), Acc{0});
        for (std::size_t r = 0; r < k; ++r) {
            const Acc av = a.data()[i * k + r];
            if (av == Acc{0}) continue;
            const Real* brow = b.data() + r * n;
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<Acc>(brow[j]);
        }
        Real* crow = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<Real>(acc[j]);
    }
    return c;
}

template <std::floating_point Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    if (a.rank() != 2) throw DimensionError("transpose needs a 2-D tensor, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<Real> t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

/// Columns [begin, begin + count) of a 2-D tensor.
template <std::floating_point Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, std::size_t begin, std::size_t count) {
    if (a.rank() != 2 || begin + count > a.dim(1))
        throw DimensionError("slice_cols out of range for " + shape_str(a.shape()));
    Tensor<Real> out({a.dim(0), count});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        std::copy_n(a.row(i).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(i).begin());
    return out;
}

template <std::floating_point Real>
void assign_cols(Tensor<Real>& dst, std::size_t begin, const Tensor<Real>& src) {
    if (dst.rank() != 2 || src.rank() != 2 || src.dim(0) != dst.dim(0) ||
        begin + src.dim(1) > dst.dim(1))
        throw DimensionError("assign_cols: " + shape_str(src.shape()) + " into " +
                             shape_str(dst.shape()));
    for (std::size_t i = 0; i < src.dim(0); ++i)
        std::copy(src.row(i).begin(), src.row(i).end(),
                  dst.row(i).begin() + static_cast<std::ptrdiff_t>(begin));
}

inline void require_finite_input(bool ok, const char* what) {
    if (!ok) throw NumericError(std::string(what) + ": non-finite input");
}

template <std::floating_point Real>
Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x / std::sqrt(Real(2))));
}

template <std::floating_point Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    require_finite_input(x.all_finite(), "gelu");
    Tensor<Real> y = x;
    for (auto& v : y.values()) v = gelu(v);
    return y;
}

/// Row-wise softmax of scale * x over the last dimension.
template <std::floating_point Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x, Real scale = Real(1)) {
    require_finite_input(x.all_finite(), "softmax");
    if (x.rank() < 2) throw DimensionError("softmax_rows needs rank >= 2, got " + shape_str(x.shape()));
    Tensor<Real> y = x;
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        Real mx = row[0] * scale;
        for (Real v : row) mx = std::max(mx, v * scale);
        Real sum = 0;
        for (auto& v : row) {
            v = std::exp(v * scale - mx);
            sum += v;
        }
        for (auto& v : row) v /= sum;
    }
    return y;
}

/// LayerNorm over the last dimension followed by the affine gamma/beta.
template <std::floating_point Real>
Tensor<Real> layernorm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                       Real eps) {
    require_finite_input(x.all_finite(), "layernorm");
    const std::size_t width = x.cols();
    if (gamma.size() != width || beta.size() != width)
        throw DimensionError("layernorm: gamma/beta size does not match last dim " +
                             std::to_string(width));
    Tensor<Real> y = x;
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        Real mean = 0;
        for (Real v : row) mean += v;
        mean /= static_cast<Real>(width);
        Real var = 0;
        for (Real v : row) var += (v - mean) * (v - mean);
        var /= static_cast<Real>(width);
        const Real inv = Real(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) row[j] = (row[j] - mean) * inv * gamma[j] + beta[j];
    }
    return y;
}

struct GeluFn {};

template <std::floating_point Real>
struct SoftmaxFn {
    Real scale = Real(1);
};

template <std::floating_point Real>
struct LayerNormFn {
    Tensor<Real> gamma;
    Tensor<Real> beta;
    Real eps = Real(1e-6);
};

/// The nonlinear functions an EC module can wrap.
template <std::floating_point Real>
using Nonlinearity = std::variant<GeluFn, SoftmaxFn<Real>, LayerNormFn<Real>>;

template <std::floating_point Real>
Tensor<Real> apply_nonlinearity(const Nonlinearity<Real>& fn, const Tensor<Real>& x) {
    return std::visit(
        [&](const auto& f) -> Tensor<Real> {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, GeluFn>)
                return gelu(x);
            else if constexpr (std::is_same_v<F, SoftmaxFn<Real>>)
                return softmax_rows(x, f.scale);
            else
                return layernorm(x, f.gamma, f.beta, f.eps);
        },
        fn);
}

template <std::floating_point Real>
const char* nonlinearity_name(const Nonlinearity<Real>& fn) {
    switch (fn.index()) {
        case 0: return "gelu";
        case 1: return "softmax";
        default: return "layernorm";
    }
}

/// Linear-interpolation percentile on a sorted copy; index = p * (len - 1).
template <typename Real>
Real percentile(std::span<const Real> values, double p) {
    if (values.empty()) throw DomainError("percentile of an empty set");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("percentile fraction must lie in [0, 1]");
    std::vector<Real> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return static_cast<Real>(static_cast<double>(sorted[lo]) +
                             frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo])));
}

/// Inverted-CDF quantile: the smallest sample x with F(x) >= p. Unlike the
/// interpolating percentile it is unchanged when the sample set is repeated.
template <typename Real>
Real quantile_rank(std::span<const Real> values, double p) {
    if (values.empty()) throw DomainError("quantile of an empty set");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile fraction must lie in [0, 1]");
    std::vector<Real> sorted(values.begin(), values.end());
    const double rank = std::ceil(p * static_cast<double>(sorted.size()) - 1e-9);
    const auto k = static_cast<std::size_t>(std::clamp(rank - 1.0, 0.0, static_cast<double>(sorted.size() - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    return sorted[k];
}

template <std::floating_point Real>
Real percentile(const Tensor<Real>& values, double p) {
    return percentile<Real>(values.values(), p);
}

}  // namespace snnconv
