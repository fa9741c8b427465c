#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mobile/config.hpp"
#include "mobile/toy_moe.hpp"

namespace mobile {

/// When a planned transfer may enter the channel.
enum class IssuePhase {
    LayerStart,    // at the start of the issue layer, before its attention
    AfterRouting,  // once the issue layer's router has run
};

struct PlannedTransfer {
    ExpertId expert;
    int issue_layer = 0;
    IssuePhase phase = IssuePhase::LayerStart;

    bool operator==(const PlannedTransfer&) const = default;
};

/// Expert transfer schedule for one forward pass.
struct PrefetchPlan {
    Selection targets;                    // per layer, the experts the plan loads
    std::vector<PlannedTransfer> order;   // sorted by (issue_layer, phase, layer, expert)

    int num_layers() const { return static_cast<int>(targets.size()); }
    bool operator==(const PrefetchPlan&) const = default;
};

struct LayerPrediction {
    std::vector<int> predicted;
    std::vector<int> truth;
    std::vector<int> hits;
    std::vector<int> misses;
};

struct PredictionOutcome {
    std::vector<LayerPrediction> layers;

    std::size_t total_predictions() const;
    std::size_t total_misses() const;
};

/// True when the little pass is not confident enough: max(p_s) <= gamma.
/// Throws if p_s does not sum to 1 within 1e-4.
bool should_fallback(std::span<const double> p_s, double gamma);

/// Every layer's big-pass set is top_k(h_s[l], K), issuable `lookahead` layers early.
PrefetchPlan build_mobile_plan(const RouterStates& h_s, int k, int lookahead);

struct PregatedPlan {
    PrefetchPlan plan;
    PredictionOutcome outcome;
};

/// One-layer-lookahead predictor: each true expert is predicted with probability p.
/// Predicted experts are issued at the start of the previous layer; misses are left to on-demand loading.
PregatedPlan build_pregated_plan(const Selection& true_selection, double prediction_accuracy,
                                 std::uint64_t seed);

/// Transfers start only after each layer's own router: no prefetch.
PrefetchPlan on_demand_plan(const Selection& selection);

/// Sorts `order` by (issue_layer, phase, layer, expert).
void sort_plan(PrefetchPlan& plan);

}  // namespace mobile
