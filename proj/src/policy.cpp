#include "mobile/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mobile/rng.hpp"

namespace mobile {

std::size_t PredictionOutcome::total_predictions() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.truth.size();
    return n;
}

std::size_t PredictionOutcome::total_misses() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.misses.size();
    return n;
}

bool should_fallback(std::span<const double> p_s, double gamma) {
    if (p_s.empty()) throw Error("should_fallback: empty distribution");
    const double sum = std::accumulate(p_s.begin(), p_s.end(), 0.0);
    if (!(std::abs(sum - 1.0) <= 1e-4)) {
        throw Error(fmt::format("should_fallback: distribution sums to {}, not 1", sum));
    }
    return *std::max_element(p_s.begin(), p_s.end()) <= gamma;
}

void sort_plan(PrefetchPlan& plan) {
    std::stable_sort(plan.order.begin(), plan.order.end(), [](const PlannedTransfer& a, const PlannedTransfer& b) {
        if (a.issue_layer != b.issue_layer) return a.issue_layer < b.issue_layer;
        if (a.phase != b.phase) return a.phase < b.phase;
        return a.expert < b.expert;
    });
}

PrefetchPlan build_mobile_plan(const RouterStates& h_s, int k, int lookahead) {
    if (lookahead < 1) throw Error(fmt::format("build_mobile_plan: lookahead depth {} < 1", lookahead));
    if (h_s.layers.empty()) throw Error("build_mobile_plan: router states cover no layers");
    PrefetchPlan plan;
    plan.targets.resize(h_s.layers.size());
    for (int l = 0; l < h_s.num_layers(); ++l) {
        plan.targets[l] = top_k(h_s.layers[l], k);
        const int issue = std::max(0, l - lookahead);
        for (int e : plan.targets[l]) plan.order.push_back({{l, e}, issue, IssuePhase::LayerStart});
    }
    sort_plan(plan);
    return plan;
}

PregatedPlan build_pregated_plan(const Selection& true_selection, double prediction_accuracy,
                                 std::uint64_t seed) {
    if (!(prediction_accuracy >= 0.0 && prediction_accuracy <= 1.0)) {
        throw Error(fmt::format("build_pregated_plan: prediction accuracy {} outside [0, 1]", prediction_accuracy));
    }
    Rng rng(seed);
    PregatedPlan out;
    out.plan.targets.resize(true_selection.size());
    out.outcome.layers.resize(true_selection.size());
    for (int l = 0; l < static_cast<int>(true_selection.size()); ++l) {
        auto& pred = out.outcome.layers[l];
        pred.truth = true_selection[l];
        // Draws happen in selection order so a replay with the same seed reproduces them.
        for (int e : true_selection[l]) {
            if (rng.bernoulli(prediction_accuracy)) {
                pred.predicted.push_back(e);
                pred.hits.push_back(e);
            } else {
                pred.misses.push_back(e);
            }
        }
        out.plan.targets[l] = pred.predicted;
        const int issue = std::max(0, l - 1);
        for (int e : pred.predicted) out.plan.order.push_back({{l, e}, issue, IssuePhase::LayerStart});
    }
    sort_plan(out.plan);
    return out;
}

PrefetchPlan on_demand_plan(const Selection& selection) {
    PrefetchPlan plan;
    plan.targets = selection;
    for (int l = 0; l < static_cast<int>(selection.size()); ++l) {
        if (selection[l].empty()) throw Error(fmt::format("on_demand_plan: layer {} selects no experts", l));
        for (int e : selection[l]) plan.order.push_back({{l, e}, l, IssuePhase::AfterRouting});
    }
    sort_plan(plan);
    return plan;
}

}  // namespace mobile
