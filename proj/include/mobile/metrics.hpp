#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mobile/sim.hpp"
#include "mobile/trace.hpp"

namespace mobile {

struct RunMetrics {
    double gamma = 0.0;
    int k_little = 0;
    double T = 0.0;    // mean baseline token latency
    double T_l = 0.0;  // mean little-pass latency, over every token
    double T_b = 0.0;  // mean big-pass latency, over fallback tokens (0 when none)
    double r = 0.0;    // fallback ratio
    double speedup_measured = 0.0;
    double speedup_analytic = 0.0;
    double stall_share = 0.0;           // MoBiLE run
    double baseline_stall_share = 0.0;  // FullBaseline run
    double cache_hit_rate = 0.0;        // MoBiLE run: expert uses served without a transfer
    std::size_t tokens = 0;
    std::size_t fallbacks = 0;
};

/// T / (T_l + r * T_b). T_b may be 0 only when r == 0.
double analytic_speedup(double T, double T_l, double T_b, double r);

/// Requires a baseline and a MoBiLE run over the same token stream.
RunMetrics aggregate(const GenerationTiming& timing, double gamma = 0.0, int k_little = 0);

/// Runs `count` independent jobs on up to `jobs` threads; results keep grid order.
std::vector<RunMetrics> run_grid(std::size_t count, int jobs, const std::function<RunMetrics(std::size_t)>& job);

std::vector<RunMetrics> gamma_sweep(std::span<const TraceRecord> trace, const ModelSpec& model, const HardwareSpec& hw,
                                    const PolicySpec& policy, std::span<const double> gammas, int jobs = 1);

/// Trace mode: fallback comes from stored confidences; k_little == K never falls back.
std::vector<RunMetrics> little_size_sweep(std::span<const TraceRecord> trace, const ModelSpec& model,
                                          const HardwareSpec& hw, const PolicySpec& policy,
                                          std::span<const int> k_littles, int jobs = 1);

/// Functional mode: regenerates with the toy model at each k_little.
std::vector<RunMetrics> little_size_sweep(const ModelSpec& model, std::span<const int> prompt, int max_len,
                                          const HardwareSpec& hw, const PolicySpec& policy,
                                          std::span<const int> k_littles, int jobs = 1);

/// Least-squares (T_l/T, T_b/T) from observed (r, speedup) pairs, fitting 1/speedup linearly in r.
struct SpeedupFit {
    double little_ratio = 0.0;
    double big_ratio = 0.0;
    double max_relative_residual = 0.0;  // max |predicted - observed| / observed speedup
};
SpeedupFit fit_speedup_model(std::span<const double> ratios, std::span<const double> speedups);

extern const char* const kCsvHeader;
std::string csv_row(const RunMetrics& m);
void write_csv(std::ostream& out, std::span<const RunMetrics> rows);

}  // namespace mobile
