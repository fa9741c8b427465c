#include "mobile/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <zlib.h>

#include "mobile/rng.hpp"

namespace mobile {

namespace {

bool ends_with(const std::string& s, const char* suffix) {
    const std::string suf(suffix);
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

void check_record(const TraceRecord& r, std::size_t line, int layers, int experts) {
    if (!(r.confidence > 0.0 && r.confidence <= 1.0)) {
        throw TraceError(line, fmt::format("confidence {} outside (0, 1]", r.confidence));
    }
    if (static_cast<int>(r.layers.size()) != layers) {
        throw TraceError(line, fmt::format("layers length {} != {}", r.layers.size(), layers));
    }
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
        if (static_cast<int>(r.layers[l].size()) != experts) {
            throw TraceError(line, fmt::format("layers[{}] length {} != {}", l, r.layers[l].size(), experts));
        }
        for (double v : r.layers[l]) {
            if (!std::isfinite(v)) throw TraceError(line, fmt::format("layers[{}] holds a non-finite logit", l));
        }
    }
}

// gzip-aware line reader; zlib reads uncompressed files transparently.
class LineReader {
public:
    explicit LineReader(const std::string& path) : file_(gzopen(path.c_str(), "rb")) {
        if (!file_) throw TraceError(0, fmt::format("cannot open trace '{}'", path));
    }
    ~LineReader() { gzclose(file_); }
    LineReader(const LineReader&) = delete;
    LineReader& operator=(const LineReader&) = delete;

    bool next(std::string& line) {
        line.clear();
        char buf[8192];
        while (gzgets(file_, buf, sizeof buf) != nullptr) {
            line += buf;
            if (!line.empty() && line.back() == '\n') {
                line.pop_back();
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return true;
            }
        }
        int err = 0;
        const char* msg = gzerror(file_, &err);
        if (err != Z_OK && err != Z_STREAM_END) throw TraceError(0, fmt::format("read error: {}", msg));
        return !line.empty();
    }

private:
    gzFile file_;
};

std::size_t weighted_pick(Rng& rng, const std::vector<double>& weights, const std::vector<bool>& taken) {
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!taken[i]) total += weights[i];
    }
    double u = rng.uniform() * total;
    std::size_t last = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (taken[i]) continue;
        last = i;
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    return last;
}

double draw_beta(Rng& rng, const BetaParams& p) {
    std::gamma_distribution<double> ga(p.alpha, 1.0);
    std::gamma_distribution<double> gb(p.beta, 1.0);
    const double x = ga(rng.engine());
    const double y = gb(rng.engine());
    const double v = x / (x + y);
    return std::clamp(v, 1e-12, 1.0);
}

}  // namespace

const SyntheticTraceConfig& validate(const SyntheticTraceConfig& c) {
    if (c.num_layers < 1) throw ConfigError("num_layers", "must be at least 1");
    if (c.num_experts < 1) throw ConfigError("num_experts", "must be at least 1");
    if (c.k < 1 || c.k > c.num_experts) throw ConfigError("k", "must lie in [1, num_experts]");
    if (!(c.popularity_skew >= 0.0)) throw ConfigError("popularity_skew", "must be non-negative");
    if (!(c.reuse_prob >= 0.0 && c.reuse_prob <= 1.0)) throw ConfigError("reuse_prob", "must lie in [0, 1]");
    if (!(c.confidence.alpha > 0.0 && c.confidence.beta > 0.0))
        throw ConfigError("confidence_dist", "Beta parameters must be positive");
    return c;
}

SyntheticTraceConfig synthetic_from_json(const nlohmann::json& j) {
    SyntheticTraceConfig c;
    if (!j.is_object()) throw ConfigError("synthetic", "expected an object");
    c.seed = j.value("seed", c.seed);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_experts = j.value("num_experts", c.num_experts);
    c.k = j.value("k", c.k);
    c.popularity_skew = j.value("popularity_skew", c.popularity_skew);
    c.reuse_prob = j.value("reuse_prob", c.reuse_prob);
    if (j.contains("confidence_dist")) {
        const auto& b = j.at("confidence_dist");
        c.confidence.alpha = b.value("alpha", c.confidence.alpha);
        c.confidence.beta = b.value("beta", c.confidence.beta);
    }
    return c;
}

nlohmann::json to_json(const SyntheticTraceConfig& c) {
    return {{"seed", c.seed},
            {"num_layers", c.num_layers},
            {"num_experts", c.num_experts},
            {"k", c.k},
            {"popularity_skew", c.popularity_skew},
            {"reuse_prob", c.reuse_prob},
            {"confidence_dist", {{"alpha", c.confidence.alpha}, {"beta", c.confidence.beta}}}};
}

void validate_trace(std::span<const TraceRecord> records, int expected_layers, int expected_experts) {
    if (records.empty()) return;
    const int layers = expected_layers ? expected_layers : static_cast<int>(records.front().layers.size());
    const int experts = expected_experts ? expected_experts
                        : records.front().layers.empty() ? 0
                                                         : static_cast<int>(records.front().layers.front().size());
    for (std::size_t i = 0; i < records.size(); ++i) check_record(records[i], i + 1, layers, experts);
}

std::string encode_record(const TraceRecord& r) {
    nlohmann::ordered_json j;
    j["t"] = r.t;
    j["confidence"] = r.confidence;
    j["layers"] = r.layers;
    return j.dump();
}

TraceRecord decode_record(const std::string& line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw TraceError(line_no, fmt::format("parse error: {}", e.what()));
    }
    if (!j.is_object()) throw TraceError(line_no, "record is not an object");
    for (const char* key : {"t", "confidence", "layers"}) {
        if (!j.contains(key)) throw TraceError(line_no, fmt::format("missing key \"{}\"", key));
    }
    TraceRecord r;
    try {
        r.t = j.at("t").get<std::int64_t>();
        r.confidence = j.at("confidence").get<double>();
        r.layers = j.at("layers").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw TraceError(line_no, fmt::format("bad field type: {}", e.what()));
    }
    return r;
}

std::vector<TraceRecord> load_trace(const std::string& path) {
    LineReader reader(path);
    std::vector<TraceRecord> out;
    std::string line;
    std::size_t line_no = 0;
    int layers = 0;
    int experts = 0;
    while (reader.next(line)) {
        ++line_no;
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        TraceRecord r = decode_record(line, line_no);
        if (out.empty()) {
            layers = static_cast<int>(r.layers.size());
            experts = r.layers.empty() ? 0 : static_cast<int>(r.layers.front().size());
            if (layers == 0 || experts == 0) throw TraceError(line_no, "layers length 0");
        }
        check_record(r, line_no, layers, experts);
        out.push_back(std::move(r));
    }
    return out;
}

void save_trace(const std::string& path, std::span<const TraceRecord> records) {
    std::string body;
    for (const auto& r : records) {
        body += encode_record(r);
        body += '\n';
    }
    if (ends_with(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb9");
        if (!f) throw TraceError(0, fmt::format("cannot write '{}'", path));
        const int written = body.empty() ? 0 : gzwrite(f, body.data(), static_cast<unsigned>(body.size()));
        const int rc = gzclose(f);
        if ((!body.empty() && written <= 0) || rc != Z_OK) throw TraceError(0, fmt::format("write failed for '{}'", path));
        return;
    }
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw TraceError(0, fmt::format("cannot write '{}'", path));
    const std::size_t n = std::fwrite(body.data(), 1, body.size(), f);
    if (std::fclose(f) != 0 || n != body.size()) throw TraceError(0, fmt::format("write failed for '{}'", path));
}

std::vector<TraceRecord> gen_synthetic(const SyntheticTraceConfig& cfg, std::size_t n_tokens) {
    validate(cfg);
    Rng rng(cfg.seed);
    const int L = cfg.num_layers;
    const int E = cfg.num_experts;

    // Per layer, a random popularity ranking; rank r has weight 1 / (r + 1)^skew.
    std::vector<std::vector<double>> weights(L, std::vector<double>(E));
    for (int l = 0; l < L; ++l) {
        std::vector<int> perm(E);
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = E - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
        for (int r = 0; r < E; ++r) weights[l][perm[r]] = 1.0 / std::pow(r + 1.0, cfg.popularity_skew);
    }

    std::vector<std::vector<int>> prev(L);
    std::vector<TraceRecord> out;
    out.reserve(n_tokens);
    for (std::size_t i = 0; i < n_tokens; ++i) {
        TraceRecord rec;
        rec.t = static_cast<std::int64_t>(i);
        rec.layers.assign(L, std::vector<double>(E));
        for (int l = 0; l < L; ++l) {
            std::vector<int> chosen;
            if (i > 0 && rng.bernoulli(cfg.reuse_prob)) {
                chosen = prev[l];
            } else {
                std::vector<bool> taken(E, false);
                for (int j = 0; j < cfg.k; ++j) {
                    const auto pick = weighted_pick(rng, weights[l], taken);
                    taken[pick] = true;
                    chosen.push_back(static_cast<int>(pick));
                }
            }
            std::vector<bool> in_set(E, false);
            for (int e : chosen) in_set[e] = true;
            // Selected experts land in [2, 3), the rest in [-2, 1): top-K recovers the set exactly.
            for (int e = 0; e < E; ++e) rec.layers[l][e] = in_set[e] ? rng.uniform(2.0, 3.0) : rng.uniform(-2.0, 1.0);
            prev[l] = std::move(chosen);
        }
        rec.confidence = draw_beta(rng, cfg.confidence);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<TraceRecord> record_from_model(const GenerationResult& run) {
    if (run.step_router_states.size() != run.decisions.size()) {
        throw Error("record_from_model: router states and decisions differ in length");
    }
    std::vector<TraceRecord> out;
    out.reserve(run.decisions.size());
    for (std::size_t i = 0; i < run.decisions.size(); ++i) {
        out.push_back({static_cast<std::int64_t>(i), run.decisions[i].confidence, run.step_router_states[i].layers});
    }
    return out;
}

std::vector<StepView> trace_steps(std::span<const TraceRecord> records, double gamma) {
    std::vector<StepView> steps;
    steps.reserve(records.size());
    for (const auto& r : records) steps.push_back({&r.layers, r.confidence <= gamma});
    return steps;
}

std::vector<StepView> trace_steps(std::span<const TraceRecord> records, const std::vector<bool>& fallback) {
    if (fallback.size() != records.size()) throw Error("trace_steps: mask length differs from trace length");
    std::vector<StepView> steps;
    steps.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) steps.push_back({&records[i].layers, fallback[i]});
    return steps;
}

std::vector<bool> inject_fallback_mask(std::size_t n, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error(fmt::format("fallback ratio {} outside [0, 1]", ratio));
    const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < count; ++i) mask[idx[i]] = true;
    return mask;
}

}  // namespace mobile
