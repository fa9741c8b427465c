#include "mobile/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "mobile/rng.hpp"

namespace mobile {

std::string to_string(PassMode mode) {
    switch (mode) {
        case PassMode::FullBaseline: return "FullBaseline";
        case PassMode::Little: return "Little";
        case PassMode::BigFallback: return "BigFallback";
    }
    return "?";
}

void EventLog::write(std::ostream& out) const {
    for (const auto& e : events_) {
        out << fmt::format("{:.9f} {} {} {}\n", e.time, e.kind, e.layer < 0 ? std::string("-") : std::to_string(e.layer),
                           e.expert < 0 ? std::string("-") : std::to_string(e.expert));
    }
}

Machine::Machine(int capacity_slots, const CostTable& c) : cache(capacity_slots), engine(c.t_xfer), costs(c) {}

namespace {

bool due(const PlannedTransfer& t, int layer, IssuePhase phase) {
    return t.issue_layer < layer || (t.issue_layer == layer && t.phase <= phase);
}

}  // namespace

LatencyBreakdown simulate_token(Machine& m, const TokenSim& sim) {
    const int num_layers = static_cast<int>(sim.selection.size());
    if (num_layers == 0) throw Error("simulate_token: empty selection");
    if (sim.plan.num_layers() != 0 && sim.plan.num_layers() != num_layers) {
        throw Error(fmt::format("simulate_token: plan covers {} layers, selection {}", sim.plan.num_layers(),
                                num_layers));
    }
    for (int l = 0; l < num_layers; ++l) {
        if (static_cast<int>(sim.selection[l].size()) != sim.experts_per_layer) {
            throw Error(fmt::format("simulate_token: {} layer {} selects {} experts, expected {}", to_string(sim.mode),
                                    l, sim.selection[l].size(), sim.experts_per_layer));
        }
    }

    const CostTable& c = m.costs;
    EventLog* log = m.log;
    LatencyBreakdown out;
    out.start = m.clock;
    double t = m.clock;

    struct Issued {
        double start;
        double ready;
    };
    std::vector<Issued> issued;
    std::set<ExpertId> pinned;  // pins held by this pass, one per expert

    auto fetch = [&](ExpertId id, double now, LayerRecord* rec) {
        const double busy_before = m.engine.busy_until();
        RequestResult r = request(m.cache, m.engine, id, now);
        if (log) {
            for (const auto& ev : r.evicted) log->add(now, "evict", ev.layer, ev.expert);
            const char* kind = r.kind == RequestKind::Hit ? "hit" : r.kind == RequestKind::InFlight ? "coalesce" : "issue";
            log->add(now, kind, id.layer, id.expert);
            if (r.kind == RequestKind::Issued) log->add(r.ready_time, "ready", id.layer, id.expert);
        }
        if (r.kind == RequestKind::Issued) {
            issued.push_back({std::max(now, busy_before), r.ready_time});
            ++out.transfers;
            if (rec) ++rec->transfers;
        }
        if (pinned.insert(id).second) m.cache.pin(id);
        return r.ready_time;
    };

    std::size_t next = 0;
    const auto& order = sim.plan.order;
    auto issue_due = [&](int layer, IssuePhase phase, double now, LayerRecord* rec) {
        while (next < order.size() && due(order[next], layer, phase)) {
            fetch(order[next].expert, now, rec);
            ++next;
        }
    };

    if (log) log->add(t, "pass_begin:" + to_string(sim.mode));
    for (int l = 0; l < num_layers; ++l) {
        LayerRecord rec;
        rec.layer = l;
        rec.start = t;

        issue_due(l, IssuePhase::LayerStart, t, &rec);

        t += c.t_attn;
        out.compute += c.t_attn;
        rec.attn_end = t;
        if (log) log->add(t, "attn_end", l);

        issue_due(l, IssuePhase::AfterRouting, t, &rec);

        double ready = t;
        for (int e : sim.selection[l]) ready = std::max(ready, fetch({l, e}, t, &rec));
        rec.ready = ready;
        rec.stall = ready - t;
        if (rec.stall > 0.0 && log) log->add(t, "stall_begin", l);
        out.transfer_stall += rec.stall;
        t = ready;

        const double expert_time = static_cast<double>(sim.selection[l].size()) * c.t_exp;
        t += expert_time;
        out.compute += expert_time;
        out.expert_uses += static_cast<int>(sim.selection[l].size());
        rec.end = t;
        if (log) log->add(t, "compute_end", l);

        for (int e : sim.selection[l]) {
            const ExpertId id{l, e};
            m.cache.touch(id);
            if (pinned.erase(id)) m.cache.unpin(id);
        }
        out.layers.push_back(rec);
    }
    // Release pins on planned experts the pass never used.
    for (const auto& id : pinned) m.cache.unpin(id);
    warm_state_carryover(m.cache);

    // Summed from the parts so conservation holds bit-for-bit; the clock may differ by rounding.
    out.total = out.compute + out.transfer_stall;
    m.clock = t;
    if (log) log->add(t, "pass_end:" + to_string(sim.mode));

    for (const auto& x : issued) {
        out.transfer_time += x.ready - x.start;
        const double lo = std::max(x.start, out.start);
        const double hi = std::min(x.ready, t);
        if (hi > lo) out.overlapped_transfer += hi - lo;
    }
    out.overlapped_transfer = std::max(0.0, out.overlapped_transfer - out.transfer_stall);
    return out;
}

double stall_share(std::span<const LatencyBreakdown> breakdowns) {
    if (breakdowns.empty()) throw Error("stall_share: no breakdowns");
    double stall = 0.0;
    double total = 0.0;
    for (const auto& b : breakdowns) {
        stall += b.transfer_stall;
        total += b.total;
    }
    return total > 0.0 ? stall / total : 0.0;
}

double GenerationTiming::mobile_token_latency(std::size_t i) const {
    double v = little.at(i).total;
    if (big.at(i)) v += big[i]->total;
    return v;
}

namespace {

Selection select_top(const std::vector<std::vector<double>>& logits, int k) {
    Selection s;
    s.reserve(logits.size());
    for (const auto& layer : logits) s.push_back(top_k(layer, k));
    return s;
}

PrefetchPlan plan_for(const PrefetchStrategy& strategy, const Selection& selection,
                      const std::vector<std::vector<double>>& h_s, int k, int lookahead, std::uint64_t seed) {
    switch (strategy.kind) {
        case PrefetchKind::OnDemand: return on_demand_plan(selection);
        case PrefetchKind::MoBiLE: return build_mobile_plan(RouterStates{h_s}, k, lookahead);
        case PrefetchKind::PredictiveGate: return build_pregated_plan(selection, strategy.prediction_accuracy, seed).plan;
    }
    throw Error("unknown prefetch strategy");
}

void check_step(const StepView& step, const ModelSpec& model, std::size_t index) {
    if (step.logits == nullptr) throw Error(fmt::format("step {}: missing router logits", index));
    if (static_cast<int>(step.logits->size()) != model.num_layers) {
        throw Error(fmt::format("step {}: {} router layers, model has {}", index, step.logits->size(),
                                model.num_layers));
    }
    for (std::size_t l = 0; l < step.logits->size(); ++l) {
        if (static_cast<int>((*step.logits)[l].size()) != model.num_experts) {
            throw Error(fmt::format("step {}: layer {} has {} router logits, model has {} experts", index, l,
                                    (*step.logits)[l].size(), model.num_experts));
        }
    }
}

}  // namespace

GenerationTiming simulate_generation(std::span<const StepView> steps, const ModelSpec& model, const HardwareSpec& hw,
                                     const PolicySpec& policy, const SimOptions& options) {
    validate(model);
    validate(hw);
    validate(policy);
    const CostTable costs = derive_costs(model, hw);
    const int slots = hbm_expert_slots(model, hw);
    const bool little_is_big = model.k_little == model.k_big;

    for (std::size_t i = 0; i < steps.size(); ++i) check_step(steps[i], model, i);

    GenerationTiming out;
    out.fallback.reserve(steps.size());
    for (const auto& s : steps) out.fallback.push_back(s.fallback && !little_is_big);

    if (options.run_baseline) {
        Machine base(slots, costs);
        base.log = options.baseline_log;
        out.baseline.reserve(steps.size());
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const auto& h = *steps[i].logits;
            const Selection sel = select_top(h, model.k_big);
            const PrefetchPlan plan = plan_for(options.baseline_prefetch, sel, h, model.k_big, hw.lookahead_depth,
                                               mix_seed(policy.seed, 3 * i + 2));
            out.baseline.push_back(simulate_token(base, {PassMode::FullBaseline, model.k_big, sel, plan}));
        }
        out.baseline_cache = base.cache.stats();
    }

    if (options.run_mobile) {
        Machine mob(slots, costs);
        mob.log = options.mobile_log;
        out.little.reserve(steps.size());
        out.big.reserve(steps.size());
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const auto& h = *steps[i].logits;
            const Selection little_sel = select_top(h, model.k_little);
            const PrefetchPlan little_plan = plan_for(policy.little_prefetch, little_sel, h, model.k_little,
                                                      hw.lookahead_depth, mix_seed(policy.seed, 3 * i));
            out.little.push_back(simulate_token(mob, {PassMode::Little, model.k_little, little_sel, little_plan}));
            if (out.fallback[i]) {
                const Selection big_sel = select_top(h, model.k_big);
                const PrefetchPlan big_plan = plan_for(policy.prefetch_strategy, big_sel, h, model.k_big,
                                                       hw.lookahead_depth, mix_seed(policy.seed, 3 * i + 1));
                out.big.push_back(simulate_token(mob, {PassMode::BigFallback, model.k_big, big_sel, big_plan}));
            } else {
                out.big.emplace_back(std::nullopt);
            }
        }
        out.mobile_cache = mob.cache.stats();
    }
    return out;
}

GenerationTiming simulate_generation(const GenerationResult& run, const ModelSpec& model, const HardwareSpec& hw,
                                     const PolicySpec& policy, const SimOptions& options) {
    if (run.step_router_states.size() != run.decisions.size()) {
        throw Error("simulate_generation: router states and decisions differ in length");
    }
    std::vector<StepView> steps;
    steps.reserve(run.decisions.size());
    for (std::size_t i = 0; i < run.decisions.size(); ++i) {
        steps.push_back({&run.step_router_states[i].layers, run.decisions[i].accepted_by == AcceptedBy::BigFallback});
    }
    return simulate_generation(std::span<const StepView>(steps), model, hw, policy, options);
}

}  // namespace mobile
