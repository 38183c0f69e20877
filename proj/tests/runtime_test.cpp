#include <gtest/gtest.h>

#include <random>

#include "snnconv/runtime.hpp"

using namespace snnconv;

namespace {

ModelConfig toy(std::size_t blocks) {
    return ModelConfig{.num_blocks = blocks, .dim = 32, .heads = 4, .mlp_dim = 64, .num_tokens = 17,
                       .num_classes = 10, .in_dim = 16, .patch = PatchSpec{4, 16, 16, 1}};
}

template <typename Real>
struct Setup {
    ModelGraph<Real> model;
    Dataset<Real> ds;
    SnnGraph<Real> g;
};

template <typename Real>
Setup<Real> setup(std::size_t blocks = 1, std::size_t samples = 4) {
    auto m = make_toy_model<Real>(toy(blocks), 31);
    auto ds = make_toy_dataset(m, samples, 32);
    auto ts = derive_thresholds(collect_stats(m, ds, samples), 99, 8, default_overrides(m.config));
    auto g = convert(m, ts);
    return {std::move(m), std::move(ds), std::move(g)};
}

}  // namespace

TEST(Runtime, AnalogModeEqualsAnnF64) {
    const auto s = setup<double>(2);
    const auto ann = ann_forward(s.model, s.ds.samples[0]).logits;
    const auto r = snn_run(s.g, s.ds.samples[0], 8, RunMode::analog_ec_only);
    for (const auto& lg : r.logits) EXPECT_LE(max_abs_diff(lg, ann), 1e-12);
}

TEST(Runtime, AnalogModeEqualsAnnF32) {
    const auto s = setup<float>(2);
    for (const auto& x : s.ds.samples) {
        const auto ann = ann_forward(s.model, x).logits;
        const auto r = snn_run(s.g, x, 4, RunMode::analog_ec_only);
        for (const auto& lg : r.logits) EXPECT_LE(max_abs_diff(lg, ann), 1e-6f);
    }
}

TEST(Runtime, MtModeEvolvesWithT) {
    const auto s = setup<double>();
    const auto r = snn_run(s.g, s.ds.samples[0], 2, RunMode::mt);
    EXPECT_NE(r.logits[0], r.logits[1]);
    EXPECT_EQ(r.logits.size(), 2u);
    EXPECT_EQ(r.cumulative_ops.size(), 2u);
    EXPECT_GE(r.cumulative_ops[1].acs, r.cumulative_ops[0].acs);
}

TEST(Runtime, MtModeDeterministic) {
    const auto s = setup<double>();
    const auto a = snn_run(s.g, s.ds.samples[1], 5, RunMode::mt);
    const auto b = snn_run(s.g, s.ds.samples[1], 5, RunMode::mt);
    EXPECT_EQ(a.logits, b.logits);
    EXPECT_EQ(a.predicted, b.predicted);
    EXPECT_EQ(a.ledger.total(), b.ledger.total());
}

TEST(Runtime, RejectsBadArguments) {
    const auto s = setup<double>();
    EXPECT_THROW(snn_run(s.g, s.ds.samples[0], 0, RunMode::mt), DomainError);
    EXPECT_THROW(snn_run(s.g, Tensor<double>({3, 16}), 1, RunMode::mt), DimensionError);
}

TEST(Runtime, SilentRunHasZeroRates) {
    auto m = make_toy_model<double>(toy(1), 5);
    for (auto& [name, t] : m.weights)
        if (name.ends_with("bias") || name == "cls_token" || name == "pos_embed") t.fill(0.0);
    ThresholdSet ts;
    ts.n = 4;
    for (const auto& site : m.calibration_sites()) ts.sites[site] = {1.0, 1.0, Provenance::percentile};
    const auto g = convert(m, ts);
    const auto r = snn_run(g, Tensor<double>({16, 16}), 3, RunMode::mt);
    const auto fr = spike_statistics(r);
    ASSERT_FALSE(fr.per_layer.empty());
    EXPECT_EQ(fr.per_layer.at("embed"), std::vector<double>(8, 0.0));
    EXPECT_EQ(fr.per_layer.at("blocks.0.attn.qkv"), std::vector<double>(8, 0.0));
}

TEST(Runtime, RatesAreFractions) {
    const auto s = setup<double>();
    const auto fr = spike_statistics(snn_run(s.g, s.ds.samples[2], 6, RunMode::mt));
    for (const auto& [site, rates] : fr.per_layer) {
        double sum = 0;
        for (double v : rates) {
            EXPECT_GE(v, 0.0);
            sum += v;
        }
        EXPECT_LE(sum, 1.0 + 1e-12) << site;
    }
}

TEST(Runtime, DatasetRunIndependentOfWorkers) {
    const auto s = setup<double>(1, 6);
    const auto a = run_dataset(s.g, s.ds, 3, RunMode::mt, 0, 1);
    const auto b = run_dataset(s.g, s.ds, 3, RunMode::mt, 0, 4);
    EXPECT_EQ(a.agreement, b.agreement);
    EXPECT_EQ(a.mean_logit_error, b.mean_logit_error);
    EXPECT_EQ(a.ledger.total(), b.ledger.total());
    EXPECT_EQ(a.bounds.violations, 0u);
    EXPECT_GT(a.bounds.steps, 0u);
}

TEST(NaiveDemo, GeluGap) {
    const std::vector<Tensor<double>> seq{Tensor<double>({1}, {2.0}), Tensor<double>({1}, {-2.0})};
    const auto r = naive_nonlinear_demo<double>([](const Tensor<double>& x) { return gelu(x); }, seq);
    const double expected = 0.5 * (2.0 * 0.5 * (1 + std::erf(2 / std::sqrt(2.0))) - 2.0 * 0.5 * (1 + std::erf(-2 / std::sqrt(2.0))));
    EXPECT_NEAR(r.naive[0], expected, 1e-12);
    EXPECT_GT(r.naive[0], r.reference[0]);
    EXPECT_EQ(r.reference[0], 0.0);
    EXPECT_NEAR(r.ec[0], 0.0, 1e-12);
}

TEST(NaiveDemo, LinearMapHasNoGap) {
    const std::vector<Tensor<double>> seq{Tensor<double>({2}, {1.0, -3.0}), Tensor<double>({2}, {0.5, 4.0}),
                                          Tensor<double>({2}, {-2.0, 0.25})};
    const auto r = naive_nonlinear_demo<double>([](const Tensor<double>& x) { return x * 3.0; }, seq);
    EXPECT_LE(max_abs_diff(r.naive, r.reference), 1e-12);
    EXPECT_LE(max_abs_diff(r.ec, r.reference), 1e-12);
}

TEST(NaiveDemo, ConstantSequence) {
    const std::vector<Tensor<double>> seq(4, Tensor<double>({1}, {1.3}));
    const auto r = naive_nonlinear_demo<double>([](const Tensor<double>& x) { return gelu(x); }, seq);
    EXPECT_NEAR(r.naive[0], r.reference[0], 1e-12);
    EXPECT_NEAR(r.ec[0], r.reference[0], 1e-12);
}

TEST(NaiveDemo, NeedsTwoSteps) {
    const std::vector<Tensor<double>> seq{Tensor<double>({1}, {1.0})};
    EXPECT_THROW(naive_nonlinear_demo<double>([](const Tensor<double>& x) { return x; }, seq), DomainError);
}
