#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "mobile/toy_moe.hpp"
#include "mobile/trace.hpp"
#include "test_support.hpp"

using namespace mobile;
using mobile::testing::scratch_dir;

namespace {

SyntheticTraceConfig small_cfg() {
    SyntheticTraceConfig c;
    c.num_layers = 4;
    c.num_experts = 16;
    c.k = 4;
    return c;
}

std::string error_of(const std::string& path) {
    try {
        load_trace(path);
    } catch (const TraceError& e) {
        return e.what();
    }
    return "no error";
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream(path, std::ios::binary) << body;
}

std::vector<std::vector<int>> top_sets(const TraceRecord& r, int k) {
    std::vector<std::vector<int>> out;
    for (const auto& l : r.layers) {
        auto s = top_k(l, k);
        std::sort(s.begin(), s.end());
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST(TraceIo, SaveLoadRoundTrip) {
    const auto dir = scratch_dir("trace_roundtrip");
    auto records = gen_synthetic(small_cfg(), 50);
    records[3].layers[1][2] = 1.0 / 3.0;  // full-precision decimal round trip
    records[4].confidence = 1.0;
    for (const char* name : {"t.jsonl", "t.jsonl.gz"}) {
        const auto path = (dir / name).string();
        save_trace(path, records);
        EXPECT_EQ(load_trace(path), records) << name;
    }
}

TEST(TraceIo, GzipIsActuallyCompressed) {
    const auto dir = scratch_dir("trace_gz");
    const auto records = gen_synthetic(small_cfg(), 20);
    save_trace((dir / "a.jsonl.gz").string(), records);
    std::ifstream in(dir / "a.jsonl.gz", std::ios::binary);
    unsigned char magic[2] = {0, 0};
    in.read(reinterpret_cast<char*>(magic), 2);
    EXPECT_EQ(magic[0], 0x1f);
    EXPECT_EQ(magic[1], 0x8b);
}

TEST(TraceIo, EmptyTraceRoundTrips) {
    const auto dir = scratch_dir("trace_empty");
    const auto path = (dir / "e.jsonl").string();
    save_trace(path, std::vector<TraceRecord>{});
    EXPECT_TRUE(load_trace(path).empty());
}

TEST(TraceIo, ShortLayerNamesField) {
    const auto dir = scratch_dir("trace_short");
    auto records = gen_synthetic(small_cfg(), 3);
    records[2].layers[1].pop_back();
    std::string body;
    for (const auto& r : records) body += encode_record(r) + "\n";
    const auto path = (dir / "bad.jsonl").string();
    write_file(path, body);
    const auto msg = error_of(path);
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("layers[1] length"), std::string::npos) << msg;
}

TEST(TraceIo, ConfidenceOutOfRange) {
    const auto dir = scratch_dir("trace_conf");
    auto r = gen_synthetic(small_cfg(), 1).front();
    const auto path = (dir / "bad.jsonl").string();
    r.confidence = 1.3;
    write_file(path, encode_record(r) + "\n");
    EXPECT_NE(error_of(path).find("confidence"), std::string::npos);
    r.confidence = 0.0;
    write_file(path, encode_record(r) + "\n");
    EXPECT_NE(error_of(path).find("confidence"), std::string::npos);
}

TEST(TraceIo, ParseErrorCarriesLineNumber) {
    const auto dir = scratch_dir("trace_parse");
    const auto r = gen_synthetic(small_cfg(), 1).front();
    const auto path = (dir / "bad.jsonl").string();
    write_file(path, encode_record(r) + "\n" + encode_record(r) + "\n{\"t\": 2, \"confidence\": \n");
    const auto msg = error_of(path);
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    write_file(path, "{\"t\": 0, \"layers\": [[1.0]]}\n");
    EXPECT_NE(error_of(path).find("missing key \"confidence\""), std::string::npos);
    EXPECT_NE(error_of((dir / "missing.jsonl").string()).find("cannot open"), std::string::npos);
}

TEST(TraceIo, ValidateTraceExpectedShape) {
    const auto records = gen_synthetic(small_cfg(), 2);
    EXPECT_NO_THROW(validate_trace(records, 4, 16));
    EXPECT_THROW(validate_trace(records, 5, 16), TraceError);
    EXPECT_THROW(validate_trace(records, 4, 15), TraceError);
}

TEST(Synthetic, DeterministicPerSeed) {
    auto c = small_cfg();
    EXPECT_EQ(gen_synthetic(c, 100), gen_synthetic(c, 100));
    auto d = c;
    d.seed = 2;
    EXPECT_NE(gen_synthetic(c, 100), gen_synthetic(d, 100));
}

TEST(Synthetic, FullReuseRepeatsFirstSelection) {
    auto c = small_cfg();
    c.reuse_prob = 1.0;
    const auto records = gen_synthetic(c, 200);
    const auto first = top_sets(records.front(), c.k);
    for (const auto& r : records) EXPECT_EQ(top_sets(r, c.k), first);
}

TEST(Synthetic, ZeroSkewIsUniform) {
    SyntheticTraceConfig c;  // L=16, E=64, K=8
    c.popularity_skew = 0.0;
    c.reuse_prob = 0.0;
    const std::size_t n = 2000;
    const auto records = gen_synthetic(c, n);
    std::vector<double> count(c.num_experts, 0.0);
    for (const auto& r : records)
        for (const auto& l : r.layers)
            for (int e : top_k(l, c.k)) count[e] += 1.0;
    const double trials = static_cast<double>(n) * c.num_layers;
    const double p = static_cast<double>(c.k) / c.num_experts;
    const double mean = trials * p;
    const double se = std::sqrt(trials * p * (1 - p));
    for (int e = 0; e < c.num_experts; ++e) EXPECT_LE(std::abs(count[e] - mean), 3 * se) << "expert " << e;
}

TEST(Synthetic, SkewConcentratesSelections) {
    auto c = small_cfg();
    c.reuse_prob = 0.0;
    c.popularity_skew = 2.0;
    const auto records = gen_synthetic(c, 1000);
    std::vector<int> count(c.num_experts, 0);
    for (const auto& r : records)
        for (int e : top_k(r.layers[0], c.k)) ++count[e];
    std::sort(count.rbegin(), count.rend());
    EXPECT_GT(count[0], 3 * count[c.num_experts - 1] + 10);
}

TEST(Synthetic, ConfidenceMeanMatchesBeta) {
    SyntheticTraceConfig c;
    const std::size_t n = 4000;
    const auto records = gen_synthetic(c, n);
    double sum = 0.0;
    for (const auto& r : records) {
        EXPECT_GT(r.confidence, 0.0);
        EXPECT_LE(r.confidence, 1.0);
        sum += r.confidence;
    }
    const double a = c.confidence.alpha, b = c.confidence.beta;
    const double mean = a / (a + b);
    const double sd = std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1)));
    EXPECT_LE(std::abs(sum / n - mean), 3 * sd / std::sqrt(static_cast<double>(n)));
}

TEST(Synthetic, ConfigValidation) {
    auto c = small_cfg();
    c.reuse_prob = 1.5;
    EXPECT_THROW(validate(c), ConfigError);
    c = small_cfg();
    c.popularity_skew = -1;
    EXPECT_THROW(validate(c), ConfigError);
    c = small_cfg();
    c.confidence.alpha = 0;
    EXPECT_THROW(validate(c), ConfigError);
    c = small_cfg();
    EXPECT_EQ(synthetic_from_json(to_json(c)).reuse_prob, c.reuse_prob);
}

TEST(RecordFromModel, ReplayTimingIsBitIdentical) {
    const auto model_spec = mobile::testing::small_model(4);
    const ToyMoEModel model(model_spec);
    PolicySpec policy;
    policy.gamma = 0.6;
    const auto run = generate(model, std::vector<int>{10, 20, 30}, policy, 40);
    const auto records = record_from_model(run);
    ASSERT_EQ(records.size(), run.decisions.size());
    for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].confidence, run.decisions[i].confidence);

    // Through a file and back, then compare every breakdown.
    const auto dir = scratch_dir("trace_replay");
    save_trace((dir / "r.jsonl").string(), records);
    const auto loaded = load_trace((dir / "r.jsonl").string());
    const auto hw = mobile::testing::roomy_hardware();
    const auto functional = simulate_generation(run, model_spec, hw, policy);
    const auto replay = simulate_generation(trace_steps(loaded, policy.gamma), model_spec, hw, policy);
    ASSERT_EQ(functional.fallback, replay.fallback);
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_EQ(functional.baseline[i].total, replay.baseline[i].total);
        EXPECT_EQ(functional.little[i].total, replay.little[i].total);
        EXPECT_EQ(functional.mobile_token_latency(i), replay.mobile_token_latency(i));
    }
}

TEST(RecordFromModel, EmptyGenerationGivesEmptyTrace) {
    EXPECT_TRUE(record_from_model(GenerationResult{}).empty());
}

TEST(FallbackMask, ExactCountAndDeterministic) {
    const auto a = inject_fallback_mask(1000, 0.21, 5);
    EXPECT_EQ(std::count(a.begin(), a.end(), true), 210);
    EXPECT_EQ(a, inject_fallback_mask(1000, 0.21, 5));
    EXPECT_NE(a, inject_fallback_mask(1000, 0.21, 6));
    EXPECT_THROW(inject_fallback_mask(10, 1.5, 1), Error);
}

TEST(TraceSteps, ConfidenceAtOrBelowGammaFallsBack) {
    auto records = gen_synthetic(small_cfg(), 3);
    records[0].confidence = 0.7;
    records[1].confidence = 0.70001;
    records[2].confidence = 1.0;
    const auto steps = trace_steps(records, 0.7);
    EXPECT_TRUE(steps[0].fallback);
    EXPECT_FALSE(steps[1].fallback);
    EXPECT_FALSE(steps[2].fallback);
}
