#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace mobile {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration. `field()` names the offending field.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct ModelSpec {
    int num_layers = 16;
    int num_experts = 64;
    int k_big = 8;
    int k_little = 4;
    int hidden_dim = 64;
    int vocab_size = 256;
    std::uint64_t expert_bytes = 12ull << 20;
    std::uint64_t dense_bytes_per_layer = 32ull << 20;
    int eos_token = 0;
    std::uint64_t seed = 1;

    // Toy-model shape knobs; they do not affect timing.
    int ffn_dim = 0;            // 0 means 2 * hidden_dim
    double output_scale = 8.0;  // multiplier on the output head logits

    int effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 2 * hidden_dim; }

    bool operator==(const ModelSpec&) const = default;
};

struct HardwareSpec {
    std::uint64_t hbm_capacity = 16ull << 30;
    double pcie_bandwidth = 24.0 * (1ull << 30);  // bytes per second
    double pcie_fixed_latency = 10e-6;             // seconds per transfer
    double gpu_expert_compute = 30e-6;             // seconds per expert-token
    double gpu_attn_compute = 200e-6;              // seconds per layer-token
    int lookahead_depth = 2;
    // HBM withheld from the expert cache: activations, KV cache, runtime workspace.
    // The default leaves 128 slots, one token's full expert working set for L=16, K=8.
    std::uint64_t reserved = 14ull << 30;

    bool operator==(const HardwareSpec&) const = default;
};

enum class PrefetchKind { OnDemand, MoBiLE, PredictiveGate };

struct PrefetchStrategy {
    PrefetchKind kind = PrefetchKind::MoBiLE;
    double prediction_accuracy = 1.0;  // only read for PredictiveGate

    bool operator==(const PrefetchStrategy&) const = default;
};

enum class EvictionPolicy { LRU };

enum class SamplingKind { Greedy, Temperature };

struct Sampling {
    SamplingKind kind = SamplingKind::Greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    bool operator==(const Sampling&) const = default;
};

struct PolicySpec {
    double gamma = 0.7;
    // Plan used by the big pass of a fallback token.
    PrefetchStrategy prefetch_strategy{PrefetchKind::MoBiLE, 1.0};
    // Plan used by every little pass; PredictiveGate models pairing with a trained pre-gate.
    PrefetchStrategy little_prefetch{PrefetchKind::OnDemand, 1.0};
    EvictionPolicy eviction = EvictionPolicy::LRU;
    Sampling sampling{};
    bool reuse_little_gates = false;
    std::uint64_t seed = 0;  // seeds predictive-gate draws

    bool operator==(const PolicySpec&) const = default;
};

struct ExpertId {
    int layer = 0;
    int expert = 0;

    auto operator<=>(const ExpertId&) const = default;
};

struct CostTable {
    double t_xfer = 0.0;  // seconds per expert upload
    double t_exp = 0.0;   // seconds per expert-token compute
    double t_attn = 0.0;  // seconds per layer-token attention (+ router)
};

/// Throws ConfigError naming the first violated field; returns the spec unchanged otherwise.
const ModelSpec& validate(const ModelSpec& spec);
const HardwareSpec& validate(const HardwareSpec& spec);
const PolicySpec& validate(const PolicySpec& spec);

CostTable derive_costs(const ModelSpec& model, const HardwareSpec& hw);

/// Number of experts the HBM can hold after dense weights and the reserved budget.
/// Throws ConfigError if fewer than k_big.
int hbm_expert_slots(const ModelSpec& model, const HardwareSpec& hw);

/// "64MiB", "16 GiB", "1.5GB", "24GiB/s" or a plain number of bytes.
double parse_quantity(std::string_view text);
/// "0.5ms", "10us", "2s" or a plain number of seconds.
double parse_seconds(std::string_view text);

ModelSpec model_from_json(const nlohmann::json& j);
HardwareSpec hardware_from_json(const nlohmann::json& j);
PolicySpec policy_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelSpec& spec);
nlohmann::json to_json(const HardwareSpec& spec);
nlohmann::json to_json(const PolicySpec& spec);

/// Reads a JSON file. Throws ConfigError on IO or parse failure.
nlohmann::json read_json_file(const std::string& path);

/// Accepts either a document with a top-level `key` object or the object itself.
const nlohmann::json& section(const nlohmann::json& doc, const char* key);

std::string to_string(PrefetchKind kind);
std::string to_string(const ExpertId& id);

}  // namespace mobile
