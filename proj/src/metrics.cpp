#include "mobile/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

namespace mobile {

const char* const kCsvHeader =
    "gamma,k_little,fallback_ratio,T,T_l,T_b,speedup_measured,speedup_analytic,stall_share,cache_hit_rate";

double analytic_speedup(double T, double T_l, double T_b, double r) {
    if (!(T > 0.0) || !(T_l > 0.0)) throw Error("analytic_speedup: latencies must be positive");
    if (!(r >= 0.0 && r <= 1.0)) throw Error(fmt::format("analytic_speedup: fallback ratio {} outside [0, 1]", r));
    if (!(T_b > 0.0) && !(T_b == 0.0 && r == 0.0)) throw Error("analytic_speedup: T_b must be positive when r > 0");
    return T / (T_l + r * T_b);
}

RunMetrics aggregate(const GenerationTiming& timing, double gamma, int k_little) {
    const std::size_t n = timing.baseline.size();
    if (n == 0) throw Error("aggregate: empty run");
    if (timing.little.size() != n || timing.big.size() != n || timing.fallback.size() != n) {
        throw Error(fmt::format("aggregate: stream mismatch (baseline {}, little {}, big {}, decisions {})", n,
                                timing.little.size(), timing.big.size(), timing.fallback.size()));
    }
    RunMetrics m;
    m.gamma = gamma;
    m.k_little = k_little;
    m.tokens = n;

    double base_sum = 0.0;
    double little_sum = 0.0;
    double big_sum = 0.0;
    double mobile_stall = 0.0;
    double uses = 0.0;
    double transfers = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        base_sum += timing.baseline[i].total;
        little_sum += timing.little[i].total;
        mobile_stall += timing.little[i].transfer_stall;
        uses += timing.little[i].expert_uses;
        transfers += timing.little[i].transfers;
        if (timing.fallback[i] != timing.big[i].has_value()) {
            throw Error(fmt::format("aggregate: token {} fallback flag disagrees with its big pass", i));
        }
        if (timing.big[i]) {
            ++m.fallbacks;
            big_sum += timing.big[i]->total;
            mobile_stall += timing.big[i]->transfer_stall;
            uses += timing.big[i]->expert_uses;
            transfers += timing.big[i]->transfers;
        }
    }
    const double mobile_sum = little_sum + big_sum;
    const double dn = static_cast<double>(n);
    m.T = base_sum / dn;
    m.T_l = little_sum / dn;
    m.T_b = m.fallbacks ? big_sum / static_cast<double>(m.fallbacks) : 0.0;
    m.r = static_cast<double>(m.fallbacks) / dn;
    m.speedup_measured = base_sum / mobile_sum;
    m.speedup_analytic = analytic_speedup(m.T, m.T_l, m.T_b, m.r);
    m.stall_share = mobile_sum > 0.0 ? mobile_stall / mobile_sum : 0.0;
    m.baseline_stall_share = stall_share(timing.baseline);
    m.cache_hit_rate = uses > 0.0 ? 1.0 - transfers / uses : 0.0;
    return m;
}

std::vector<RunMetrics> run_grid(std::size_t count, int jobs, const std::function<RunMetrics(std::size_t)>& job) {
    std::vector<RunMetrics> rows(count);
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) rows[i] = job(i);
        return rows;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    rows[i] = job(i);
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return rows;
}

std::vector<RunMetrics> gamma_sweep(std::span<const TraceRecord> trace, const ModelSpec& model, const HardwareSpec& hw,
                                    const PolicySpec& policy, std::span<const double> gammas, int jobs) {
    for (double g : gammas) {
        if (!(g >= 0.0 && g <= 1.0)) throw Error(fmt::format("gamma_sweep: gamma {} outside [0, 1]", g));
    }
    return run_grid(gammas.size(), jobs, [&](std::size_t i) {
        PolicySpec p = policy;
        p.gamma = gammas[i];
        const auto steps = trace_steps(trace, p.gamma);
        return aggregate(simulate_generation(steps, model, hw, p), p.gamma, model.k_little);
    });
}

std::vector<RunMetrics> little_size_sweep(std::span<const TraceRecord> trace, const ModelSpec& model,
                                          const HardwareSpec& hw, const PolicySpec& policy,
                                          std::span<const int> k_littles, int jobs) {
    for (int k : k_littles) {
        if (k < 1 || k > model.k_big) throw Error(fmt::format("little_size_sweep: k_little {} outside [1, K]", k));
    }
    return run_grid(k_littles.size(), jobs, [&](std::size_t i) {
        ModelSpec m = model;
        m.k_little = k_littles[i];
        const auto steps = trace_steps(trace, policy.gamma);
        return aggregate(simulate_generation(steps, m, hw, policy), policy.gamma, m.k_little);
    });
}

std::vector<RunMetrics> little_size_sweep(const ModelSpec& model, std::span<const int> prompt, int max_len,
                                          const HardwareSpec& hw, const PolicySpec& policy,
                                          std::span<const int> k_littles, int jobs) {
    for (int k : k_littles) {
        if (k < 1 || k > model.k_big) throw Error(fmt::format("little_size_sweep: k_little {} outside [1, K]", k));
    }
    return run_grid(k_littles.size(), jobs, [&](std::size_t i) {
        ModelSpec m = model;
        m.k_little = k_littles[i];
        const ToyMoEModel toy(m);
        const auto run = generate(toy, prompt, policy, max_len);
        if (run.decisions.empty()) throw Error("little_size_sweep: generation produced no tokens");
        return aggregate(simulate_generation(run, m, hw, policy), policy.gamma, m.k_little);
    });
}

SpeedupFit fit_speedup_model(std::span<const double> ratios, std::span<const double> speedups) {
    if (ratios.size() != speedups.size() || ratios.size() < 2) {
        throw Error("fit_speedup_model: need at least two (ratio, speedup) pairs");
    }
    // 1/speedup = a + b r, ordinary least squares.
    const double n = static_cast<double>(ratios.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double x = ratios[i];
        const double y = 1.0 / speedups[i];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw Error("fit_speedup_model: ratios must not all be equal");
    SpeedupFit fit;
    fit.big_ratio = (n * sxy - sx * sy) / denom;
    fit.little_ratio = (sy - fit.big_ratio * sx) / n;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double predicted = 1.0 / (fit.little_ratio + fit.big_ratio * ratios[i]);
        fit.max_relative_residual = std::max(fit.max_relative_residual, std::abs(predicted - speedups[i]) / speedups[i]);
    }
    return fit;
}

std::string csv_row(const RunMetrics& m) {
    return fmt::format("{:.6g},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}", m.gamma, m.k_little, m.r, m.T,
                       m.T_l, m.T_b, m.speedup_measured, m.speedup_analytic, m.stall_share, m.cache_hit_rate);
}

void write_csv(std::ostream& out, std::span<const RunMetrics> rows) {
    out << kCsvHeader << '\n';
    for (const auto& m : rows) out << csv_row(m) << '\n';
}

}  // namespace mobile
