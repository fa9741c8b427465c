#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mobile/config.hpp"
#include "mobile/sim.hpp"
#include "mobile/toy_moe.hpp"

namespace mobile {

/// Parse or validation failure. `line()` is 1-based, 0 when not tied to a line.
class TraceError : public Error {
public:
    TraceError(std::size_t line, const std::string& what)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// One generated token: little-pass confidence and router logits (L x E).
struct TraceRecord {
    std::int64_t t = 0;
    double confidence = 1.0;
    std::vector<std::vector<double>> layers;

    bool operator==(const TraceRecord&) const = default;
};

struct BetaParams {
    double alpha = 8.0;
    double beta = 3.0;
};

struct SyntheticTraceConfig {
    std::uint64_t seed = 1;
    int num_layers = 16;
    int num_experts = 64;
    int k = 8;
    double popularity_skew = 1.0;  // Zipf exponent over each layer's expert ranking
    double reuse_prob = 0.5;       // per layer, keep the previous token's top-K set
    BetaParams confidence{};
};

const SyntheticTraceConfig& validate(const SyntheticTraceConfig& cfg);
SyntheticTraceConfig synthetic_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticTraceConfig& cfg);

/// Checks shape and ranges. `expected_layers`/`expected_experts` of 0 take the first record's shape.
void validate_trace(std::span<const TraceRecord> records, int expected_layers = 0, int expected_experts = 0);

/// JSON lines: {"t":..,"confidence":..,"layers":[[..],..]}. Paths ending in ".gz" are gzip streams.
std::vector<TraceRecord> load_trace(const std::string& path);
void save_trace(const std::string& path, std::span<const TraceRecord> records);

std::string encode_record(const TraceRecord& record);
TraceRecord decode_record(const std::string& line, std::size_t line_no);

std::vector<TraceRecord> gen_synthetic(const SyntheticTraceConfig& cfg, std::size_t n_tokens);

/// Bridges a functional run into trace form; replaying it gives the same timing.
std::vector<TraceRecord> record_from_model(const GenerationResult& run);

/// Timing view of a trace: fallback iff confidence <= gamma.
std::vector<StepView> trace_steps(std::span<const TraceRecord> records, double gamma);
/// Same, with an explicit fallback mask.
std::vector<StepView> trace_steps(std::span<const TraceRecord> records, const std::vector<bool>& fallback);

/// Deterministic mask with round(ratio * n) fallbacks at seeded positions.
std::vector<bool> inject_fallback_mask(std::size_t n, double ratio, std::uint64_t seed);

}  // namespace mobile
