#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "snnconv/neuron.hpp"

using namespace snnconv;

TEST(Ladder, DirectFormula) {
    EXPECT_EQ(build_ladder(1.0, 1.0, 2).lambda, (std::vector<double>{1, 2, -1, -2}));
    EXPECT_EQ(build_ladder(0.5, 0.08, 1).lambda, (std::vector<double>{0.5, -0.08}));
    EXPECT_EQ(build_ladder(1.0, 2.0, 3).lambda, (std::vector<double>{1, 2, 4, -2, -4, -8}));
}

TEST(Ladder, RejectsBadThresholds) {
    EXPECT_THROW(build_ladder(0.0, 1.0, 2), DomainError);
    EXPECT_THROW(build_ladder(1.0, -1.0, 2), DomainError);
    EXPECT_THROW(build_ladder(1.0, 1.0, 0), DomainError);
}

TEST(Mth, Bands) {
    const auto l2 = build_ladder(1.0, 1.0, 2);
    EXPECT_EQ(mth(0.7, l2), 1);
    EXPECT_EQ(mth(0.0, l2), 0);
    EXPECT_EQ(mth(1.5, l2), 2);
    EXPECT_EQ(mth(100.0, l2), 2);
    EXPECT_EQ(mth(-0.5, l2), 0);   // lower edge of the dead band is inclusive
    EXPECT_EQ(mth(-0.51, l2), 3);
    EXPECT_EQ(mth(0.5, l2), 1);    // positive band edge is inclusive
    const auto l3 = build_ladder(1.0, 2.0, 3);
    EXPECT_EQ(mth(-3.4, l3), 5);
    EXPECT_EQ(mth(-7.0, l3), 5);
    EXPECT_EQ(mth(-7.01, l3), 6);
}

TEST(MtNeuron, Quiescence) {
    MTNeuronState<double> st({3}, build_ladder(1.0, 1.0, 2));
    const auto r = mt_step(st, Tensor<double>({3}));
    EXPECT_EQ(r.spikes.fired(), 0u);
    for (double v : r.x.values()) EXPECT_EQ(v, 0.0);
    for (double v : st.v.values()) EXPECT_EQ(v, 0.0);
}

TEST(MtNeuron, TwoStepTrace) {
    MTNeuronState<double> st({1}, build_ladder(1.0, 1.0, 2));
    auto r = mt_step(st, Tensor<double>({1}, {3.6}));
    EXPECT_EQ(r.spikes.index[0], 2);
    EXPECT_EQ(r.x[0], 2.0);
    EXPECT_NEAR(st.v[0], 1.6, 1e-15);
    r = mt_step(st, Tensor<double>({1}, {0.0}));
    EXPECT_EQ(r.spikes.index[0], 2);
    EXPECT_NEAR(st.v[0], -0.4, 1e-15);
    EXPECT_EQ(st.spike_counts[2], 2u);
}

TEST(MtNeuron, RejectsNonFinite) {
    MTNeuronState<double> st({1}, build_ladder(1.0, 1.0, 2));
    EXPECT_THROW(mt_step(st, Tensor<double>({1}, {std::numeric_limits<double>::infinity()})), NumericError);
    EXPECT_THROW(mt_step(st, Tensor<double>({2})), DimensionError);
}

TEST(MtNeuron, ChargeConservationAndOneHot) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> d(0, 3);
    MTNeuronState<double> st({5}, build_ladder(0.7, 1.3, 4));
    Tensor<double> in_sum({5}), x_sum({5});
    for (int t = 0; t < 50; ++t) {
        Tensor<double> in({5});
        for (auto& v : in.values()) v = d(rng);
        const auto r = mt_step(st, in);
        const auto planes = to_planes(r.spikes, 4);
        for (std::size_t i = 0; i < 5; ++i) {
            int active = 0;
            for (const auto& p : planes) active += p[i];
            EXPECT_LE(active, 1);
        }
        EXPECT_EQ(spikes_to_values(r.spikes, st.ladder), r.x);
        in_sum += in;
        x_sum += r.x;
    }
    EXPECT_LE(max_abs_diff(x_sum + st.v, in_sum), 1e-12);
}

TEST(MtNeuron, Deterministic) {
    const auto l = build_ladder(0.3, 0.2, 8);
    MTNeuronState<double> a({2}, l), b({2}, l);
    for (double in : {0.4, -1.2, 7.5, 0.01})
        EXPECT_EQ(mt_step(a, Tensor<double>({2}, {in, -in})).spikes, mt_step(b, Tensor<double>({2}, {in, -in})).spikes);
}

TEST(SpikeMap, PlanesRoundTrip) {
    SpikeMap s({2, 3});
    s.index = {0, 1, 4, 2, 0, 3};
    EXPECT_EQ(from_planes(to_planes(s, 2), {2, 3}), s);
    const auto t = transpose(s);
    EXPECT_EQ(t.shape, (Shape{3, 2}));
    EXPECT_EQ(t.at(2, 0), 4);
    EXPECT_EQ(transpose(t), s);
}

TEST(SpikeMap, FromPlanesRejectsDoubleFiring) {
    std::vector<std::vector<std::uint8_t>> planes{{1}, {1}};
    EXPECT_THROW(from_planes(planes, {1}), DomainError);
}
