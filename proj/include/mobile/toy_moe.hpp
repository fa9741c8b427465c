#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mobile/config.hpp"

namespace mobile {

/// Per-layer expert indices, in selection order.
using Selection = std::vector<std::vector<int>>;

/// Router logits of every layer at the last sequence position (L x E).
struct RouterStates {
    std::vector<std::vector<double>> layers;

    int num_layers() const { return static_cast<int>(layers.size()); }
    bool operator==(const RouterStates&) const = default;
};

/// Top-k indices by descending logit; ties go to the lower index.
std::vector<int> top_k(std::span<const double> logits, int k);

/// Row-major dense matrix.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
    bool operator==(const Matrix&) const = default;
};

struct ExpertWeights {
    Matrix up;    // ffn x d
    Matrix down;  // d x ffn
    bool operator==(const ExpertWeights&) const = default;
};

struct LayerWeights {
    Matrix wq, wk, wv, wo;  // d x d
    Matrix router;          // E x d
    std::vector<ExpertWeights> experts;
    bool operator==(const LayerWeights&) const = default;
};

struct ForwardResult {
    std::vector<double> probs;   // next-token distribution at the last position
    RouterStates router_states;  // this pass's router logits at the last position
    Selection selection;         // experts used at the last position
};

/// Deterministic toy MoE decoder. Immutable after construction.
class ToyMoEModel {
public:
    static constexpr int kMaxHiddenDim = 1024;
    static constexpr int kMaxVocab = 1 << 16;
    static constexpr int kMaxLayers = 256;
    static constexpr int kMaxExperts = 1024;

    explicit ToyMoEModel(const ModelSpec& spec);

    const ModelSpec& spec() const { return spec_; }

    /// k_little experts per layer, each layer routing for itself.
    ForwardResult little_forward(std::span<const int> sequence) const;
    /// K experts per layer, each layer routing for itself (the unmodified model).
    ForwardResult full_forward(std::span<const int> sequence) const;
    /// K experts per layer. At the last position layer l uses top_k(h_s[l], K); gates come from this
    /// pass's own router restricted to that set, or from h_s when `reuse_little_gates` is set.
    ForwardResult big_forward(std::span<const int> sequence, const RouterStates& h_s,
                              bool reuse_little_gates = false) const;

    const std::vector<LayerWeights>& layers() const { return layers_; }
    bool operator==(const ToyMoEModel& other) const;

private:
    ForwardResult forward(std::span<const int> sequence, int k, const RouterStates* forced,
                          bool reuse_forced_gates) const;
    void check_sequence(std::span<const int> sequence) const;

    ModelSpec spec_;
    Matrix embedding_;  // V x d
    std::vector<LayerWeights> layers_;
    Matrix head_;  // V x d
};

ToyMoEModel build_model(const ModelSpec& spec);

enum class AcceptedBy { Little, BigFallback };

struct TokenDecision {
    int token = 0;
    AcceptedBy accepted_by = AcceptedBy::Little;
    double confidence = 0.0;
    std::optional<RouterStates> router_states;  // h_s of the evicted token, fallback only
    Selection big_selection;                    // experts big_forward used, fallback only
};

struct GenerationResult {
    std::vector<int> tokens;  // generated tokens, prompt excluded
    std::vector<TokenDecision> decisions;
    // Little-pass router logits for every step, fallback or not. Drives the timing replay.
    std::vector<RouterStates> step_router_states;
};

/// Little pass, confidence test, big-pass fallback; stops at eos or after `max_len` new tokens.
GenerationResult generate(const ToyMoEModel& model, std::span<const int> prompt, const PolicySpec& policy,
                          int max_len);

/// Greedy argmax, ties to the lower token id.
int argmax(std::span<const double> probs);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace mobile
