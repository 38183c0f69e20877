#include <gtest/gtest.h>

#include <random>

#include "snnconv/ec.hpp"
#include "snnconv/energy.hpp"

using namespace snnconv;

namespace {

Tensor<double> randn(std::mt19937_64& rng, Shape s, double sd = 1.0) {
    std::normal_distribution<double> d(0, sd);
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = d(rng);
    return t;
}

SpikeMap random_spikes(std::mt19937_64& rng, Shape s, std::size_t channels, double rate) {
    SpikeMap m(std::move(s));
    std::uniform_real_distribution<double> u;
    std::uniform_int_distribution<int> c(1, static_cast<int>(channels));
    for (auto& i : m.index)
        if (u(rng) < rate) i = static_cast<SpikeIndex>(c(rng));
    return m;
}

Tensor<double> dense(const SpikeMap& s, const ThresholdLadder<double>& l) { return spikes_to_values(s, l); }

}  // namespace

TEST(Ec, FirstStepIsPlainF) {
    ECState<double> st;
    const Tensor<double> a({1, 3}, {0.5, -1.0, 2.0});
    EXPECT_EQ(ec_step(st, a, Nonlinearity<double>{GeluFn{}}), gelu(a));
}

TEST(Ec, ConstantInputIsFixedPoint) {
    std::mt19937_64 rng(2);
    const auto a = randn(rng, {2, 5});
    const Nonlinearity<double> fn = SoftmaxFn<double>{0.5};
    ECState<double> st;
    for (int t = 0; t < 10; ++t) EXPECT_LE(max_abs_diff(ec_step(st, a, fn), softmax_rows(a, 0.5)), 1e-14);
}

TEST(Ec, MatchesFromScratchRecomputation) {
    std::mt19937_64 rng(3);
    ECState<double> st;
    std::vector<Tensor<double>> xs;
    for (int t = 1; t <= 5; ++t) {
        xs.push_back(randn(rng, {1, 7}, 2.0));
        const auto o = ec_step(st, xs.back(), Nonlinearity<double>{GeluFn{}});
        Tensor<double> s_t({1, 7}), s_prev({1, 7});
        for (int k = 0; k < t; ++k) s_t += xs[k];
        for (int k = 0; k < t - 1; ++k) s_prev += xs[k];
        Tensor<double> oracle = gelu(s_t * (1.0 / t)) * static_cast<double>(t);
        if (t > 1) oracle -= gelu(s_prev * (1.0 / (t - 1))) * static_cast<double>(t - 1);
        EXPECT_LE(max_abs_diff(o, oracle), 1e-12) << "T=" << t;
    }
}

TEST(Ec, ShapeChangeIsStateError) {
    ECState<double> st;
    ec_step(st, Tensor<double>({2}), Nonlinearity<double>{GeluFn{}});
    EXPECT_THROW(ec_step(st, Tensor<double>({3}), Nonlinearity<double>{GeluFn{}}), StateError);
}

TEST(MatMulEc, FirstStepIsProduct) {
    std::mt19937_64 rng(4);
    const auto la = build_ladder(0.5, 0.7, 2), lb = build_ladder(1.0, 0.3, 2);
    MatMulECState<double> st(3, 4, 2, la, lb);
    const auto a = random_spikes(rng, {3, 4}, 4, 0.6), b = random_spikes(rng, {4, 2}, 4, 0.6);
    EXPECT_LE(max_abs_diff(st.step(a, b), matmul(dense(a, la), dense(b, lb))), 1e-12);
}

TEST(MatMulEc, SilentStepDecays) {
    std::mt19937_64 rng(5);
    const auto la = build_ladder(1.0, 1.0, 2), lb = build_ladder(1.0, 1.0, 2);
    MatMulECState<double> st(2, 3, 2, la, lb);
    st.step(random_spikes(rng, {2, 3}, 4, 0.8), random_spikes(rng, {3, 2}, 4, 0.8));
    st.step(random_spikes(rng, {2, 3}, 4, 0.8), random_spikes(rng, {3, 2}, 4, 0.8));
    const auto sk = st.s_k();
    const auto o = st.step(SpikeMap({2, 3}), SpikeMap({3, 2}));
    EXPECT_TRUE(st.last_ops().skipped);
    for (double k : st.last_k().values()) EXPECT_EQ(k, 0.0);
    EXPECT_LE(max_abs_diff(o, sk * (-1.0 / 6.0)), 1e-12);
    EXPECT_EQ(matmul_ec_opcount(st.last_ops()).first, 0u);
}

TEST(MatMulEc, DirectProductTelescopingAndExpansion) {
    std::mt19937_64 rng(6);
    const auto la = build_ladder(0.4, 0.6, 2), lb = build_ladder(0.9, 0.2, 2);
    MatMulECState<double> st(4, 5, 3, la, lb);
    Tensor<double> sa({4, 5}), sb({5, 3}), osum({4, 3});
    for (int t = 1; t <= 6; ++t) {
        const auto a = random_spikes(rng, {4, 5}, 4, 0.5), b = random_spikes(rng, {5, 3}, 4, 0.5);
        const auto ad = dense(a, la), bd = dense(b, lb);
        const auto k = matmul(ad, bd) + matmul(ad, sb) + matmul(sa, bd);
        osum += st.step(a, b);
        sa += ad;
        sb += bd;
        EXPECT_LE(max_abs_diff(st.s_k(), matmul(sa, sb)), 1e-12);
        EXPECT_LE(max_abs_diff(osum * (1.0 / t), matmul(sa, sb) * (1.0 / (t * t))), 1e-12);
        EXPECT_LE(max_abs_diff(st.last_k(), k), 1e-12);
    }
}

TEST(MatMulEc, FullRateCountsWithinAppendixMaxima) {
    const std::size_t n = 3, p = 4, m = 5;
    const auto l = build_ladder(1.0, 1.0, 1);
    MatMulECState<double> st(n, p, m, l, l);
    SpikeMap a({n, p}), b({p, m});
    std::fill(a.index.begin(), a.index.end(), 1);
    std::fill(b.index.begin(), b.index.end(), 1);
    for (int t = 0; t < 3; ++t) {
        st.step(a, b);
        const auto [adds, muls] = matmul_ec_opcount(st.last_ops());
        EXPECT_LE(adds, 3 * n * p * m + 3 * n * m);
        EXPECT_LE(muls, 3 * n * m);
        EXPECT_EQ(st.last_ops().multiplications, 0u);
    }
}

TEST(MatMulEc, SparseCountsWithinRateBound) {
    std::mt19937_64 rng(8);
    const auto la = build_ladder(1.0, 1.0, 3), lb = build_ladder(0.5, 0.5, 2);
    MatMulECState<double> st(6, 7, 8, la, lb);
    for (int t = 0; t < 10; ++t) {
        st.step(random_spikes(rng, {6, 7}, 6, 0.2), random_spikes(rng, {7, 8}, 4, 0.3));
        const auto& r = st.last_ops();
        const auto [adds, muls] = matmul_ec_opcount(r);
        const auto b = matmul_ec_bounds(r.rate_a(), r.rate_b(), 6, 7, 8);
        EXPECT_LE(static_cast<double>(adds), b.acs_max);
        EXPECT_LE(static_cast<double>(muls), b.macs_max);
    }
}

TEST(MatMulEc, DenseModeMatchesProduct) {
    std::mt19937_64 rng(9);
    MatMulECState<double> st(3, 4, 2);
    Tensor<double> sa({3, 4}), sb({4, 2}), osum({3, 2});
    for (int t = 1; t <= 4; ++t) {
        const auto a = randn(rng, {3, 4}), b = randn(rng, {4, 2});
        osum += st.step_dense(a, b);
        sa += a;
        sb += b;
        EXPECT_LE(max_abs_diff(osum * (1.0 / t), matmul(sa, sb) * (1.0 / (t * t))), 1e-12);
    }
}

TEST(MatMulEc, NonConformingOperands) {
    const auto l = build_ladder(1.0, 1.0, 1);
    MatMulECState<double> st(2, 3, 4, l, l);
    EXPECT_THROW(st.step(SpikeMap({2, 2}), SpikeMap({3, 4})), StateError);
    SpikeMap bad({2, 3});
    bad.index[0] = 3;
    EXPECT_THROW(st.step(bad, SpikeMap({3, 4})), StateError);
}
