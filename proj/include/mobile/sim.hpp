#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobile/config.hpp"
#include "mobile/memory.hpp"
#include "mobile/policy.hpp"
#include "mobile/toy_moe.hpp"

namespace mobile {

enum class PassMode { FullBaseline, Little, BigFallback };

std::string to_string(PassMode mode);

/// Debug trace of a simulation: one line per event.
class EventLog {
public:
    struct Event {
        double time = 0.0;
        std::string kind;
        int layer = -1;
        int expert = -1;
    };

    void add(double time, std::string kind, int layer = -1, int expert = -1) {
        events_.push_back({time, std::move(kind), layer, expert});
    }
    const std::vector<Event>& events() const { return events_; }

    /// "<time seconds, %.9f> <kind> <layer|-> <expert|->" per line.
    void write(std::ostream& out) const;

private:
    std::vector<Event> events_;
};

/// Simulated GPU + channel state owned by one run. Persists across tokens.
struct Machine {
    Machine(int capacity_slots, const CostTable& costs);

    HbmCache cache;
    TransferEngine engine;
    CostTable costs;
    double clock = 0.0;
    EventLog* log = nullptr;
};

struct LayerRecord {
    int layer = 0;
    double start = 0.0;
    double attn_end = 0.0;
    double ready = 0.0;  // all selected experts resident
    double stall = 0.0;
    double end = 0.0;
    int transfers = 0;   // transfers issued during this layer
};

struct LatencyBreakdown {
    double start = 0.0;
    double total = 0.0;
    double compute = 0.0;
    double transfer_stall = 0.0;
    double overlapped_transfer = 0.0;  // channel time hidden behind compute
    double transfer_time = 0.0;        // channel time of transfers issued by this pass
    int expert_uses = 0;
    int transfers = 0;
    std::vector<LayerRecord> layers;
};

/// One forward pass over the timing model.
struct TokenSim {
    PassMode mode = PassMode::FullBaseline;
    int experts_per_layer = 0;  // K or k_little, checked against `selection`
    const Selection& selection;
    const PrefetchPlan& plan;
};

/// Advances `machine.clock` through every layer: issue due plan transfers, attention,
/// on-demand requests for the rest of the layer's experts, stall until resident, expert compute.
/// Pins are cleared when the pass ends.
LatencyBreakdown simulate_token(Machine& machine, const TokenSim& sim);

/// Fraction of total latency spent waiting on transfers.
double stall_share(std::span<const LatencyBreakdown> breakdowns);

struct GenerationTiming {
    std::vector<LatencyBreakdown> baseline;            // FullBaseline, one per token
    std::vector<LatencyBreakdown> little;              // one per token
    std::vector<std::optional<LatencyBreakdown>> big;  // set for fallback tokens
    std::vector<bool> fallback;
    CacheStats baseline_cache;
    CacheStats mobile_cache;

    /// Per-token MoBiLE latency: little pass plus big pass when it fell back.
    double mobile_token_latency(std::size_t i) const;
};

struct SimOptions {
    bool run_baseline = true;
    bool run_mobile = true;
    // Prefetch used by the baseline; OnDemand is the plain offloading baseline.
    PrefetchStrategy baseline_prefetch{PrefetchKind::OnDemand, 1.0};
    EventLog* baseline_log = nullptr;
    EventLog* mobile_log = nullptr;
};

/// Per-token little-pass router logits (h_s), plus the fallback flag of each token.
struct StepView {
    const std::vector<std::vector<double>>* logits = nullptr;
    bool fallback = false;
};

/// Core timing run over a decision stream. When k_little == K no token falls back.
GenerationTiming simulate_generation(std::span<const StepView> steps, const ModelSpec& model,
                                     const HardwareSpec& hw, const PolicySpec& policy,
                                     const SimOptions& options = {});

/// Functional mode: fallback flags come from the decisions.
GenerationTiming simulate_generation(const GenerationResult& run, const ModelSpec& model, const HardwareSpec& hw,
                                     const PolicySpec& policy, const SimOptions& options = {});

}  // namespace mobile
