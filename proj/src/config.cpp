#include "mobile/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

namespace mobile {

namespace {

void require(bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(field, what);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Splits "12.5 MiB" into (12.5, "MiB").
std::pair<double, std::string> split_number(std::string_view text, const char* what) {
    text = trim(text);
    std::string s(text);
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError(what, fmt::format("cannot parse '{}'", s));
    }
    std::string unit(trim(std::string_view(s).substr(used)));
    return {value, unit};
}

double number_or_quantity(const nlohmann::json& j, const char* field) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        try {
            return parse_quantity(j.get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(field, e.what());
        }
    }
    throw ConfigError(field, "expected a number or a quantity string");
}

double number_or_seconds(const nlohmann::json& j, const char* field) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        try {
            return parse_seconds(j.get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(field, e.what());
        }
    }
    throw ConfigError(field, "expected a number of seconds or a duration string");
}

std::uint64_t to_bytes(double v, const char* field) {
    require(std::isfinite(v) && v >= 0.0 && v < 1.8e19, field, "byte count out of range");
    return static_cast<std::uint64_t>(std::llround(v));
}

template <typename T>
void read_int(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        throw ConfigError(key, "expected an integer");
    out = v.get<T>();
}

PrefetchStrategy strategy_from_json(const nlohmann::json& j, const char* field) {
    PrefetchStrategy s;
    std::string name;
    if (j.is_string()) {
        name = j.get<std::string>();
    } else if (j.is_object() && j.contains("kind")) {
        name = j.at("kind").get<std::string>();
        if (j.contains("prediction_accuracy"))
            s.prediction_accuracy = j.at("prediction_accuracy").get<double>();
    } else {
        throw ConfigError(field, "expected a strategy name or {kind, prediction_accuracy}");
    }
    if (name == "OnDemand") s.kind = PrefetchKind::OnDemand;
    else if (name == "MoBiLE") s.kind = PrefetchKind::MoBiLE;
    else if (name == "PredictiveGate") s.kind = PrefetchKind::PredictiveGate;
    else throw ConfigError(field, fmt::format("unknown strategy '{}'", name));
    return s;
}

nlohmann::json strategy_to_json(const PrefetchStrategy& s) {
    nlohmann::json j{{"kind", to_string(s.kind)}};
    if (s.kind == PrefetchKind::PredictiveGate) j["prediction_accuracy"] = s.prediction_accuracy;
    return j;
}

}  // namespace

const ModelSpec& validate(const ModelSpec& m) {
    require(m.num_layers >= 1, "num_layers", "must be at least 1");
    require(m.num_experts >= 1, "num_experts", "must be at least 1");
    require(m.k_big >= 1, "k_big", "must be at least 1");
    require(m.k_big <= m.num_experts, "k_big", "k_big exceeds num_experts");
    require(m.k_little >= 1, "k_little", "must be at least 1");
    require(m.k_little <= m.k_big, "k_little", "k_little exceeds K");
    require(m.hidden_dim >= 1, "hidden_dim", "must be at least 1");
    require(m.vocab_size >= 2, "vocab_size", "must be at least 2");
    require(m.expert_bytes > 0, "expert_bytes", "must be positive");
    require(m.eos_token >= 0 && m.eos_token < m.vocab_size, "eos_token", "outside vocabulary");
    require(m.ffn_dim >= 0, "ffn_dim", "must be non-negative");
    require(std::isfinite(m.output_scale) && m.output_scale > 0.0, "output_scale", "must be positive");
    return m;
}

const HardwareSpec& validate(const HardwareSpec& h) {
    require(h.hbm_capacity > 0, "hbm_capacity", "must be positive");
    require(std::isfinite(h.pcie_bandwidth) && h.pcie_bandwidth > 0.0, "pcie_bandwidth", "must be positive");
    require(std::isfinite(h.pcie_fixed_latency) && h.pcie_fixed_latency >= 0.0, "pcie_fixed_latency",
            "must be non-negative");
    require(std::isfinite(h.gpu_expert_compute) && h.gpu_expert_compute > 0.0, "gpu_expert_compute",
            "must be positive");
    require(std::isfinite(h.gpu_attn_compute) && h.gpu_attn_compute > 0.0, "gpu_attn_compute",
            "must be positive");
    require(h.lookahead_depth >= 1, "lookahead_depth", "must be at least 1");
    return h;
}

const PolicySpec& validate(const PolicySpec& p) {
    require(p.gamma >= 0.0 && p.gamma <= 1.0, "gamma", "gamma out of range [0, 1]");
    for (const auto* s : {&p.prefetch_strategy, &p.little_prefetch}) {
        require(s->prediction_accuracy >= 0.0 && s->prediction_accuracy <= 1.0, "prediction_accuracy",
                "prediction accuracy out of range [0, 1]");
    }
    require(p.little_prefetch.kind != PrefetchKind::MoBiLE, "little_prefetch",
            "the little pass has no router states to plan from; use OnDemand or PredictiveGate");
    if (p.sampling.kind == SamplingKind::Temperature)
        require(p.sampling.temperature > 0.0, "temperature", "must be positive");
    return p;
}

CostTable derive_costs(const ModelSpec& model, const HardwareSpec& hw) {
    CostTable c;
    c.t_xfer = hw.pcie_fixed_latency + static_cast<double>(model.expert_bytes) / hw.pcie_bandwidth;
    c.t_exp = hw.gpu_expert_compute;
    c.t_attn = hw.gpu_attn_compute;
    return c;
}

int hbm_expert_slots(const ModelSpec& model, const HardwareSpec& hw) {
    const auto dense = static_cast<std::uint64_t>(model.num_layers) * model.dense_bytes_per_layer;
    const auto fixed = dense + hw.reserved;
    std::uint64_t slots = 0;
    if (hw.hbm_capacity > fixed) slots = (hw.hbm_capacity - fixed) / model.expert_bytes;
    if (slots < static_cast<std::uint64_t>(model.k_big)) {
        throw ConfigError("hbm_capacity",
                          fmt::format("room for {} experts, fewer than K = {}", slots, model.k_big));
    }
    if (slots > static_cast<std::uint64_t>(std::numeric_limits<int>::max())) return std::numeric_limits<int>::max();
    return static_cast<int>(slots);
}

double parse_quantity(std::string_view text) {
    auto [value, unit] = split_number(text, "quantity");
    if (unit.size() >= 2 && unit.substr(unit.size() - 2) == "/s") unit = std::string(trim(unit.substr(0, unit.size() - 2)));
    double scale = 0.0;
    if (unit.empty() || unit == "B") scale = 1.0;
    else if (unit == "KB") scale = 1e3;
    else if (unit == "MB") scale = 1e6;
    else if (unit == "GB") scale = 1e9;
    else if (unit == "TB") scale = 1e12;
    else if (unit == "KiB") scale = 1024.0;
    else if (unit == "MiB") scale = 1024.0 * 1024.0;
    else if (unit == "GiB") scale = 1024.0 * 1024.0 * 1024.0;
    else if (unit == "TiB") scale = 1024.0 * 1024.0 * 1024.0 * 1024.0;
    else throw ConfigError("quantity", fmt::format("unknown unit '{}' in '{}'", unit, text));
    return value * scale;
}

double parse_seconds(std::string_view text) {
    auto [value, unit] = split_number(text, "duration");
    if (unit.empty() || unit == "s") return value;
    // Divide by exact powers of ten so "10us" parses to the same double as the literal 10e-6.
    if (unit == "ms") return value / 1e3;
    if (unit == "us") return value / 1e6;
    if (unit == "ns") return value / 1e9;
    throw ConfigError("duration", fmt::format("unknown unit '{}' in '{}'", unit, text));
}

ModelSpec model_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model", "expected an object");
    ModelSpec m;
    read_int(j, "num_layers", m.num_layers);
    read_int(j, "num_experts", m.num_experts);
    read_int(j, "k_big", m.k_big);
    if (j.contains("k_little")) read_int(j, "k_little", m.k_little);
    else m.k_little = std::max(1, m.k_big / 2);
    read_int(j, "hidden_dim", m.hidden_dim);
    read_int(j, "vocab_size", m.vocab_size);
    if (j.contains("expert_bytes")) m.expert_bytes = to_bytes(number_or_quantity(j["expert_bytes"], "expert_bytes"), "expert_bytes");
    if (j.contains("dense_bytes_per_layer"))
        m.dense_bytes_per_layer = to_bytes(number_or_quantity(j["dense_bytes_per_layer"], "dense_bytes_per_layer"),
                                           "dense_bytes_per_layer");
    read_int(j, "eos_token", m.eos_token);
    read_int(j, "seed", m.seed);
    read_int(j, "ffn_dim", m.ffn_dim);
    if (j.contains("output_scale")) m.output_scale = j["output_scale"].get<double>();
    return m;
}

HardwareSpec hardware_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("hardware", "expected an object");
    HardwareSpec h;
    if (j.contains("hbm_capacity")) h.hbm_capacity = to_bytes(number_or_quantity(j["hbm_capacity"], "hbm_capacity"), "hbm_capacity");
    if (j.contains("pcie_bandwidth")) h.pcie_bandwidth = number_or_quantity(j["pcie_bandwidth"], "pcie_bandwidth");
    if (j.contains("pcie_fixed_latency")) h.pcie_fixed_latency = number_or_seconds(j["pcie_fixed_latency"], "pcie_fixed_latency");
    if (j.contains("gpu_expert_compute")) h.gpu_expert_compute = number_or_seconds(j["gpu_expert_compute"], "gpu_expert_compute");
    if (j.contains("gpu_attn_compute")) h.gpu_attn_compute = number_or_seconds(j["gpu_attn_compute"], "gpu_attn_compute");
    read_int(j, "lookahead_depth", h.lookahead_depth);
    if (j.contains("reserved")) h.reserved = to_bytes(number_or_quantity(j["reserved"], "reserved"), "reserved");
    return h;
}

PolicySpec policy_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("policy", "expected an object");
    PolicySpec p;
    if (j.contains("gamma")) p.gamma = j["gamma"].get<double>();
    if (j.contains("prefetch_strategy")) p.prefetch_strategy = strategy_from_json(j["prefetch_strategy"], "prefetch_strategy");
    if (j.contains("prediction_accuracy")) p.prefetch_strategy.prediction_accuracy = j["prediction_accuracy"].get<double>();
    if (j.contains("little_prefetch")) p.little_prefetch = strategy_from_json(j["little_prefetch"], "little_prefetch");
    if (j.contains("eviction")) {
        if (j["eviction"].get<std::string>() != "LRU") throw ConfigError("eviction", "only LRU is supported");
    }
    if (j.contains("sampling")) {
        const auto& s = j["sampling"];
        std::string name = s.is_string() ? s.get<std::string>() : s.value("kind", std::string{});
        if (name == "Greedy") {
            p.sampling.kind = SamplingKind::Greedy;
        } else if (name == "Temperature") {
            p.sampling.kind = SamplingKind::Temperature;
            if (s.is_object()) {
                p.sampling.temperature = s.value("t", 1.0);
                p.sampling.seed = s.value("seed", std::uint64_t{0});
            }
        } else {
            throw ConfigError("sampling", fmt::format("unknown sampling '{}'", name));
        }
    }
    if (j.contains("reuse_little_gates")) p.reuse_little_gates = j["reuse_little_gates"].get<bool>();
    read_int(j, "seed", p.seed);
    return p;
}

nlohmann::json to_json(const ModelSpec& m) {
    return {{"num_layers", m.num_layers},   {"num_experts", m.num_experts},
            {"k_big", m.k_big},             {"k_little", m.k_little},
            {"hidden_dim", m.hidden_dim},   {"vocab_size", m.vocab_size},
            {"expert_bytes", m.expert_bytes}, {"dense_bytes_per_layer", m.dense_bytes_per_layer},
            {"eos_token", m.eos_token},     {"seed", m.seed},
            {"ffn_dim", m.ffn_dim},         {"output_scale", m.output_scale}};
}

nlohmann::json to_json(const HardwareSpec& h) {
    return {{"hbm_capacity", h.hbm_capacity},
            {"pcie_bandwidth", h.pcie_bandwidth},
            {"pcie_fixed_latency", h.pcie_fixed_latency},
            {"gpu_expert_compute", h.gpu_expert_compute},
            {"gpu_attn_compute", h.gpu_attn_compute},
            {"lookahead_depth", h.lookahead_depth},
            {"reserved", h.reserved}};
}

nlohmann::json to_json(const PolicySpec& p) {
    nlohmann::json sampling;
    if (p.sampling.kind == SamplingKind::Greedy) sampling = "Greedy";
    else sampling = {{"kind", "Temperature"}, {"t", p.sampling.temperature}, {"seed", p.sampling.seed}};
    return {{"gamma", p.gamma},
            {"prefetch_strategy", strategy_to_json(p.prefetch_strategy)},
            {"little_prefetch", strategy_to_json(p.little_prefetch)},
            {"eviction", "LRU"},
            {"sampling", sampling},
            {"reuse_little_gates", p.reuse_little_gates},
            {"seed", p.seed}};
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open file");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path, e.what());
    }
}

const nlohmann::json& section(const nlohmann::json& doc, const char* key) {
    if (doc.is_object() && doc.contains(key)) return doc.at(key);
    return doc;
}

std::string to_string(PrefetchKind kind) {
    switch (kind) {
        case PrefetchKind::OnDemand: return "OnDemand";
        case PrefetchKind::MoBiLE: return "MoBiLE";
        case PrefetchKind::PredictiveGate: return "PredictiveGate";
    }
    return "?";
}

std::string to_string(const ExpertId& id) { return fmt::format("L{}E{}", id.layer, id.expert); }

}  // namespace mobile
