#include <gtest/gtest.h>

#include <sstream>

#include "mobile/metrics.hpp"
#include "mobile/rng.hpp"
#include "test_support.hpp"

using namespace mobile;

TEST(AnalyticSpeedup, ZeroFallbackIsRatio) {
    EXPECT_DOUBLE_EQ(analytic_speedup(2.0, 0.5, 0.0, 0.0), 4.0);
    EXPECT_DOUBLE_EQ(analytic_speedup(2.0, 0.5, 9.0, 0.0), 4.0);
}

TEST(AnalyticSpeedup, TableCalibrationPoint) {
    // 1 / (0.5405 + 0.21 * 0.459) = 1.57013; the quoted 1.571 is rounded.
    EXPECT_NEAR(analytic_speedup(1.0, 0.5405, 0.459, 0.21), 1.571, 1e-3);
    EXPECT_DOUBLE_EQ(analytic_speedup(1.0, 0.5405, 0.459, 0.21), 1.0 / 0.63689);
}

TEST(AnalyticSpeedup, EqualLatenciesAllFallback) {
    EXPECT_DOUBLE_EQ(analytic_speedup(1.0, 1.0, 1.0, 1.0), 0.5);
}

TEST(AnalyticSpeedup, RejectsBadInputs) {
    EXPECT_THROW(analytic_speedup(0.0, 1.0, 1.0, 0.5), Error);
    EXPECT_THROW(analytic_speedup(1.0, -1.0, 1.0, 0.5), Error);
    EXPECT_THROW(analytic_speedup(1.0, 1.0, 0.0, 0.5), Error);
    EXPECT_THROW(analytic_speedup(1.0, 1.0, 1.0, 1.5), Error);
}

TEST(AnalyticSpeedup, Monotonicity) {
    const double base = analytic_speedup(1.0, 0.5, 0.5, 0.2);
    EXPECT_LT(analytic_speedup(1.0, 0.6, 0.5, 0.2), base);
    EXPECT_LT(analytic_speedup(1.0, 0.5, 0.6, 0.2), base);
    EXPECT_LT(analytic_speedup(1.0, 0.5, 0.5, 0.3), base);
    EXPECT_GT(analytic_speedup(1.1, 0.5, 0.5, 0.2), base);
}

namespace {

LatencyBreakdown breakdown(double total) {
    LatencyBreakdown b;
    b.total = total;
    b.compute = total;
    return b;
}

}  // namespace

TEST(Aggregate, StationaryCaseMatchesAnalyticExactly) {
    GenerationTiming t;
    for (int i = 0; i < 10; ++i) {
        t.baseline.push_back(breakdown(1.0));
        t.little.push_back(breakdown(0.5));
        const bool fb = i % 5 == 0;
        t.fallback.push_back(fb);
        t.big.push_back(fb ? std::optional(breakdown(0.4)) : std::nullopt);
    }
    const auto m = aggregate(t, 0.7, 4);
    EXPECT_EQ(m.tokens, 10u);
    EXPECT_EQ(m.fallbacks, 2u);
    EXPECT_DOUBLE_EQ(m.r, 0.2);
    EXPECT_DOUBLE_EQ(m.T_b, 0.4);
    EXPECT_NEAR(m.speedup_measured, m.speedup_analytic, 1e-12);
    EXPECT_NEAR(m.speedup_measured, 1.0 / (0.5 + 0.2 * 0.4), 1e-12);
}

TEST(Aggregate, StreamMismatchRejected) {
    GenerationTiming t;
    t.baseline.push_back(breakdown(1.0));
    EXPECT_THROW(aggregate(t), Error);
    t.little.push_back(breakdown(1.0));
    t.big.push_back(std::nullopt);
    t.fallback.push_back(true);  // flag without a big pass
    EXPECT_THROW(aggregate(t), Error);
    EXPECT_THROW(aggregate(GenerationTiming{}), Error);
}

TEST(Aggregate, RatioMatchesDecisionRecount) {
    const auto spec = mobile::testing::small_model(6);
    const ToyMoEModel model(spec);
    PolicySpec p;
    p.gamma = 0.6;
    const auto run = generate(model, std::vector<int>{1, 5, 9}, p, 48);
    const auto m = aggregate(simulate_generation(run, spec, mobile::testing::roomy_hardware(), p), p.gamma,
                             spec.k_little);
    std::size_t recount = 0;
    for (const auto& d : run.decisions) recount += d.accepted_by == AcceptedBy::BigFallback;
    EXPECT_EQ(m.fallbacks, recount);
    EXPECT_DOUBLE_EQ(m.r, static_cast<double>(recount) / run.decisions.size());
}

TEST(Aggregate, MeasuredEqualsAnalyticByConstruction) {
    SyntheticTraceConfig c;
    const auto trace = gen_synthetic(c, 300);
    const std::vector<double> gammas{0.0, 0.5, 0.7, 0.8, 1.0};
    for (const auto& m : gamma_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, gammas, 2)) {
        EXPECT_NEAR(m.speedup_measured, m.speedup_analytic, 1e-9 * m.speedup_analytic);
    }
}

TEST(GammaSweep, RatioNondecreasingSpeedupNonincreasing) {
    SyntheticTraceConfig c;
    const auto trace = gen_synthetic(c, 400);
    const std::vector<double> gammas{0.0, 0.5, 0.7, 0.8};
    const auto rows = gamma_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, gammas, 4);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].r, 0.0);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].gamma, gammas[i]);
        EXPECT_GE(rows[i].r, rows[i - 1].r);
        EXPECT_LE(rows[i].speedup_measured, rows[i - 1].speedup_measured);
    }
    EXPECT_THROW(gamma_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, std::vector<double>{1.5}), Error);
}

TEST(GammaSweep, ThreadCountDoesNotChangeRows) {
    SyntheticTraceConfig c;
    const auto trace = gen_synthetic(c, 150);
    const std::vector<double> gammas{0.8, 0.0, 0.7, 0.5, 0.6};
    const auto one = gamma_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, gammas, 1);
    const auto many = gamma_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, gammas, 5);
    for (std::size_t i = 0; i < gammas.size(); ++i) EXPECT_EQ(csv_row(one[i]), csv_row(many[i]));
}

TEST(LittleSizeSweep, FullSizeIsUnitySpeedup) {
    SyntheticTraceConfig c;
    const auto trace = gen_synthetic(c, 300);
    const std::vector<int> ks{2, 4, 6, 8};
    const auto rows = little_size_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, ks, 2);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[3].r, 0.0);
    EXPECT_NEAR(rows[3].speedup_measured, 1.0, 0.02);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i - 1].T_l, rows[i].T_l);
    EXPECT_THROW(little_size_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, std::vector<int>{9}), Error);
    EXPECT_THROW(little_size_sweep(trace, ModelSpec{}, HardwareSpec{}, PolicySpec{}, std::vector<int>{0}), Error);
}

TEST(LittleSizeSweep, FunctionalModeProducesRows) {
    const auto spec = mobile::testing::small_model(2);
    const std::vector<int> ks{1, 2, 4};
    const auto rows = little_size_sweep(spec, std::vector<int>{3, 6, 9}, 16, mobile::testing::roomy_hardware(),
                                        PolicySpec{}, ks, 3);
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 0; i < ks.size(); ++i) EXPECT_EQ(rows[i].k_little, ks[i]);
    EXPECT_EQ(rows[2].r, 0.0);
}

TEST(SpeedupFit, ThresholdSeriesIsNotExactlyConsistent) {
    const std::vector<double> r{0.0, 0.10, 0.21, 0.27};
    const std::vector<double> s{1.85, 1.65, 1.57, 1.54};
    const auto fit = fit_speedup_model(r, s);
    EXPECT_GT(fit.little_ratio, 0.0);
    EXPECT_GT(fit.big_ratio, 0.0);
    // No single (T_l, T_b) pair reproduces all four rows; the best fit misses by a few percent.
    EXPECT_GT(fit.max_relative_residual, 0.01);
    EXPECT_LT(fit.max_relative_residual, 0.05);
}

TEST(SpeedupFit, RecoversExactModel) {
    const std::vector<double> r{0.0, 0.2, 0.5, 1.0};
    std::vector<double> s;
    for (double x : r) s.push_back(analytic_speedup(1.0, 0.55, 0.45, x));
    const auto fit = fit_speedup_model(r, s);
    EXPECT_NEAR(fit.little_ratio, 0.55, 1e-12);
    EXPECT_NEAR(fit.big_ratio, 0.45, 1e-12);
    EXPECT_LT(fit.max_relative_residual, 1e-12);
    EXPECT_THROW(fit_speedup_model(std::vector<double>{0.1, 0.1}, std::vector<double>{1, 1}), Error);
}

TEST(Csv, HeaderAndRowShape) {
    EXPECT_STREQ(kCsvHeader,
                 "gamma,k_little,fallback_ratio,T,T_l,T_b,speedup_measured,speedup_analytic,stall_share,cache_hit_rate");
    RunMetrics m;
    m.gamma = 0.7;
    m.k_little = 4;
    m.r = 0.21;
    m.T = 1;
    m.T_l = 0.5;
    m.T_b = 0.5;
    std::ostringstream out;
    write_csv(out, std::vector<RunMetrics>{m});
    const auto text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
    EXPECT_EQ(csv_row(m).substr(0, 12), "0.7,4,0.21,1");
}

TEST(RunGrid, PropagatesFailure) {
    EXPECT_THROW(run_grid(8, 4,
                          [](std::size_t i) -> RunMetrics {
                              if (i == 5) throw Error("boom");
                              return {};
                          }),
                 Error);
}
