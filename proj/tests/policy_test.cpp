#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mobile/policy.hpp"
#include "mobile/rng.hpp"

using namespace mobile;

namespace {

RouterStates random_states(Rng& rng, int L, int E) {
    RouterStates h;
    h.layers.assign(L, std::vector<double>(E));
    for (auto& l : h.layers)
        for (auto& x : l) x = rng.uniform(-3, 3);
    return h;
}

}  // namespace

TEST(ShouldFallback, ThresholdIsStrict) {
    EXPECT_FALSE(should_fallback(std::vector<double>{0.9, 0.1}, 0.7));
    EXPECT_TRUE(should_fallback(std::vector<double>{0.7, 0.3}, 0.7));
    EXPECT_TRUE(should_fallback(std::vector<double>{0.6, 0.4}, 0.7));
}

TEST(ShouldFallback, GammaZeroNeverFallsBack) {
    EXPECT_FALSE(should_fallback(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.0));
}

TEST(ShouldFallback, GammaOneAlwaysFallsBack) {
    EXPECT_TRUE(should_fallback(std::vector<double>{1.0, 0.0}, 1.0));
}

TEST(ShouldFallback, RejectsUnnormalized) {
    EXPECT_THROW(should_fallback(std::vector<double>{0.5, 0.6}, 0.7), Error);
    EXPECT_NO_THROW(should_fallback(std::vector<double>{0.5, 0.50005}, 0.7));
}

TEST(MobilePlan, TwoLayerExample) {
    RouterStates h;
    h.layers = {{0.5, 2, 1, 3}, {3, 2, 1, 0.5}};
    const auto plan = build_mobile_plan(h, 2, 1);
    ASSERT_EQ(plan.num_layers(), 2);
    EXPECT_EQ(plan.targets[0], (std::vector<int>{3, 1}));
    EXPECT_EQ(plan.targets[1], (std::vector<int>{0, 1}));
    const std::vector<PlannedTransfer> expected{{{0, 1}, 0, IssuePhase::LayerStart},
                                                {{0, 3}, 0, IssuePhase::LayerStart},
                                                {{1, 0}, 0, IssuePhase::LayerStart},
                                                {{1, 1}, 0, IssuePhase::LayerStart}};
    EXPECT_EQ(plan.order, expected);
}

TEST(MobilePlan, LookaheadClampsAtZero) {
    Rng rng(1);
    const auto h = random_states(rng, 6, 16);
    const auto plan = build_mobile_plan(h, 4, 6);
    EXPECT_EQ(plan.order.size(), 24u);
    for (const auto& t : plan.order) EXPECT_EQ(t.issue_layer, 0);
    const auto plan2 = build_mobile_plan(h, 4, 2);
    for (const auto& t : plan2.order) EXPECT_EQ(t.issue_layer, std::max(0, t.expert.layer - 2));
}

TEST(MobilePlan, OrderRespectsLayers) {
    Rng rng(2);
    const auto plan = build_mobile_plan(random_states(rng, 8, 32), 4, 3);
    for (std::size_t i = 1; i < plan.order.size(); ++i) {
        const auto& a = plan.order[i - 1];
        const auto& b = plan.order[i];
        EXPECT_LE(std::tie(a.issue_layer, a.expert), std::tie(b.issue_layer, b.expert));
    }
    for (const auto& t : plan.targets) EXPECT_EQ(t.size(), 4u);
}

TEST(MobilePlan, RejectsZeroLookahead) {
    RouterStates h;
    h.layers = {{1, 2}};
    EXPECT_THROW(build_mobile_plan(h, 1, 0), Error);
}

TEST(MobilePlan, Deterministic) {
    Rng rng(3);
    const auto h = random_states(rng, 5, 10);
    EXPECT_EQ(build_mobile_plan(h, 3, 2), build_mobile_plan(h, 3, 2));
}

TEST(PregatedPlan, PerfectPredictorEqualsMobileDepthOne) {
    Rng rng(4);
    const auto h = random_states(rng, 8, 32);
    Selection sel;
    for (const auto& l : h.layers) sel.push_back(top_k(l, 4));
    const auto pre = build_pregated_plan(sel, 1.0, 99);
    EXPECT_EQ(pre.outcome.total_misses(), 0u);
    EXPECT_EQ(pre.plan, build_mobile_plan(h, 4, 1));
}

TEST(PregatedPlan, ZeroAccuracyMissesEverything) {
    Selection sel{{1, 2}, {3, 4}, {5, 6}};
    const auto pre = build_pregated_plan(sel, 0.0, 1);
    EXPECT_EQ(pre.outcome.total_predictions(), 6u);
    EXPECT_EQ(pre.outcome.total_misses(), 6u);
    EXPECT_TRUE(pre.plan.order.empty());
}

TEST(PregatedPlan, MissCountMatchesSeededReplay) {
    Rng rng(5);
    Selection sel;
    for (int l = 0; l < 8; ++l) {
        std::vector<double> logits(16);
        for (auto& x : logits) x = rng.uniform(0, 1);
        sel.push_back(top_k(logits, 4));
    }
    const std::uint64_t seed = 1234;
    const auto pre = build_pregated_plan(sel, 0.5, seed);

    Rng replay(seed);
    std::size_t misses = 0;
    for (const auto& layer : sel)
        for (std::size_t i = 0; i < layer.size(); ++i) misses += !replay.bernoulli(0.5);
    EXPECT_EQ(pre.outcome.total_misses(), misses);

    for (std::size_t l = 0; l < sel.size(); ++l) {
        const auto& o = pre.outcome.layers[l];
        std::vector<int> u = o.hits;
        u.insert(u.end(), o.misses.begin(), o.misses.end());
        std::sort(u.begin(), u.end());
        std::vector<int> truth = o.truth;
        std::sort(truth.begin(), truth.end());
        EXPECT_EQ(u, truth);
        EXPECT_EQ(o.hits, o.predicted);
    }
    for (const auto& t : pre.plan.order) EXPECT_EQ(t.issue_layer, std::max(0, t.expert.layer - 1));
}

TEST(PregatedPlan, RejectsBadAccuracy) {
    EXPECT_THROW(build_pregated_plan({{0}}, 1.5, 1), Error);
    EXPECT_THROW(build_pregated_plan({{0}}, -0.1, 1), Error);
}

TEST(OnDemandPlan, IssuesAtOwnLayerAfterRouting) {
    Selection sel{{2, 0}, {1}, {3, 1, 2}};
    const auto plan = on_demand_plan(sel);
    EXPECT_EQ(plan.targets, sel);
    EXPECT_EQ(plan.order.size(), 6u);
    for (const auto& t : plan.order) {
        EXPECT_EQ(t.issue_layer, t.expert.layer);
        EXPECT_EQ(t.phase, IssuePhase::AfterRouting);
    }
}

TEST(OnDemandPlan, EmptyLayerRejected) {
    EXPECT_THROW(on_demand_plan(Selection{{1}, {}}), Error);
}
