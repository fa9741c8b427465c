#include "mobile/toy_moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mobile/rng.hpp"

namespace mobile {

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double scale) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = rng.uniform(-1.0, 1.0) * scale;
    return m;
}

// out = m * x
void matvec(const Matrix& m, const double* x, double* out) {
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.row(r);
        double acc = 0.0;
        for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        out[r] = acc;
    }
}

std::vector<double> rms_norm(const double* x, int d) {
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    const double inv = 1.0 / std::sqrt(ss / d + 1e-6);
    std::vector<double> out(d);
    for (int i = 0; i < d; ++i) out[i] = x[i] * inv;
    return out;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double position_code(int pos, int i, int d) {
    const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
    return (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
}

}  // namespace

std::vector<int> top_k(std::span<const double> logits, int k) {
    const int n = static_cast<int>(logits.size());
    if (k < 0 || k > n) throw Error(fmt::format("top_k: k = {} outside [0, {}]", k, n));
    for (double v : logits) {
        if (!std::isfinite(v)) throw Error("top_k: non-finite logit");
    }
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.begin(), logits.end());
    if (out.empty()) return out;
    const double mx = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (auto& v : out) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : out) v /= sum;
    return out;
}

int argmax(std::span<const double> probs) {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

ToyMoEModel::ToyMoEModel(const ModelSpec& spec) : spec_(validate(spec)) {
    if (spec.hidden_dim > kMaxHiddenDim || spec.vocab_size > kMaxVocab || spec.num_layers > kMaxLayers ||
        spec.num_experts > kMaxExperts || spec.effective_ffn_dim() > 4 * kMaxHiddenDim) {
        throw ConfigError("model", fmt::format("toy model dimensions too large (d={}, V={}, L={}, E={})",
                                               spec.hidden_dim, spec.vocab_size, spec.num_layers,
                                               spec.num_experts));
    }
    const int d = spec.hidden_dim;
    const int f = spec.effective_ffn_dim();
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sf = 1.0 / std::sqrt(static_cast<double>(f));

    Rng rng(spec.seed);
    embedding_ = random_matrix(rng, spec.vocab_size, d, 1.0);
    layers_.resize(spec.num_layers);
    for (auto& layer : layers_) {
        layer.wq = random_matrix(rng, d, d, sd);
        layer.wk = random_matrix(rng, d, d, sd);
        layer.wv = random_matrix(rng, d, d, sd);
        layer.wo = random_matrix(rng, d, d, sd);
        layer.router = random_matrix(rng, spec.num_experts, d, sd);
        layer.experts.resize(spec.num_experts);
        for (auto& e : layer.experts) {
            e.up = random_matrix(rng, f, d, sd);
            e.down = random_matrix(rng, d, f, sf);
        }
    }
    head_ = random_matrix(rng, spec.vocab_size, d, sd);
}

bool ToyMoEModel::operator==(const ToyMoEModel& other) const {
    return spec_ == other.spec_ && embedding_ == other.embedding_ && layers_ == other.layers_ &&
           head_ == other.head_;
}

void ToyMoEModel::check_sequence(std::span<const int> sequence) const {
    if (sequence.empty()) throw Error("forward: empty sequence");
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        if (sequence[i] < 0 || sequence[i] >= spec_.vocab_size) {
            throw Error(fmt::format("forward: token {} at position {} is outside the vocabulary of {}",
                                    sequence[i], i, spec_.vocab_size));
        }
    }
}

ForwardResult ToyMoEModel::forward(std::span<const int> sequence, int k, const RouterStates* forced,
                                   bool reuse_forced_gates) const {
    check_sequence(sequence);
    const int n = static_cast<int>(sequence.size());
    const int d = spec_.hidden_dim;
    const int f = spec_.effective_ffn_dim();
    const int num_experts = spec_.num_experts;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    for (int p = 0; p < n; ++p) {
        const double* emb = embedding_.row(sequence[p]);
        for (int i = 0; i < d; ++i) x[p][i] = emb[i] + position_code(p, i, d);
    }

    ForwardResult result;
    result.router_states.layers.resize(spec_.num_layers);
    result.selection.resize(spec_.num_layers);

    std::vector<double> q(d), kv_tmp(d), attn(d), proj(d), logits(num_experts), hidden(f), out(d);
    std::vector<std::vector<double>> keys(n, std::vector<double>(d)), values(n, std::vector<double>(d));
    std::vector<double> scores(n);

    for (int l = 0; l < spec_.num_layers; ++l) {
        const LayerWeights& w = layers_[l];

        // Causal single-head attention over the pre-layer hidden states.
        std::vector<std::vector<double>> normed(n);
        for (int p = 0; p < n; ++p) {
            normed[p] = rms_norm(x[p].data(), d);
            matvec(w.wk, normed[p].data(), keys[p].data());
            matvec(w.wv, normed[p].data(), values[p].data());
        }
        for (int p = 0; p < n; ++p) {
            matvec(w.wq, normed[p].data(), q.data());
            for (int s = 0; s <= p; ++s) {
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += q[i] * keys[s][i];
                scores[s] = dot * attn_scale;
            }
            const auto weights = softmax(std::span<const double>(scores.data(), p + 1));
            std::fill(attn.begin(), attn.end(), 0.0);
            for (int s = 0; s <= p; ++s) {
                for (int i = 0; i < d; ++i) attn[i] += weights[s] * values[s][i];
            }
            matvec(w.wo, attn.data(), proj.data());
            for (int i = 0; i < d; ++i) x[p][i] += proj[i];
        }

        // Routed expert FFN.
        for (int p = 0; p < n; ++p) {
            const auto h = rms_norm(x[p].data(), d);
            matvec(w.router, h.data(), logits.data());
            const bool last = (p == n - 1);

            std::vector<int> chosen;
            std::vector<double> gate_logits;
            if (last && forced != nullptr) {
                chosen = top_k(forced->layers[l], k);
                const auto& src = reuse_forced_gates ? forced->layers[l] : logits;
                for (int e : chosen) gate_logits.push_back(src[e]);
            } else {
                chosen = top_k(logits, k);
                for (int e : chosen) gate_logits.push_back(logits[e]);
            }
            const auto gates = softmax(gate_logits);

            std::fill(out.begin(), out.end(), 0.0);
            for (std::size_t j = 0; j < chosen.size(); ++j) {
                const ExpertWeights& ew = w.experts[chosen[j]];
                matvec(ew.up, h.data(), hidden.data());
                for (auto& v : hidden) v = silu(v);
                matvec(ew.down, hidden.data(), proj.data());
                for (int i = 0; i < d; ++i) out[i] += gates[j] * proj[i];
            }
            for (int i = 0; i < d; ++i) x[p][i] += out[i];

            if (last) {
                result.router_states.layers[l] = logits;
                result.selection[l] = std::move(chosen);
            }
        }
    }

    const auto h = rms_norm(x[n - 1].data(), d);
    std::vector<double> vocab_logits(spec_.vocab_size);
    matvec(head_, h.data(), vocab_logits.data());
    for (auto& v : vocab_logits) v *= spec_.output_scale;
    result.probs = softmax(vocab_logits);
    return result;
}

ForwardResult ToyMoEModel::little_forward(std::span<const int> sequence) const {
    return forward(sequence, spec_.k_little, nullptr, false);
}

ForwardResult ToyMoEModel::full_forward(std::span<const int> sequence) const {
    return forward(sequence, spec_.k_big, nullptr, false);
}

ForwardResult ToyMoEModel::big_forward(std::span<const int> sequence, const RouterStates& h_s,
                                       bool reuse_little_gates) const {
    if (h_s.num_layers() != spec_.num_layers) {
        throw Error(fmt::format("big_forward: router states cover {} layers, model has {}", h_s.num_layers(),
                                spec_.num_layers));
    }
    for (int l = 0; l < h_s.num_layers(); ++l) {
        if (static_cast<int>(h_s.layers[l].size()) != spec_.num_experts) {
            throw Error(fmt::format("big_forward: router states layer {} has {} logits, expected {}", l,
                                    h_s.layers[l].size(), spec_.num_experts));
        }
    }
    return forward(sequence, spec_.k_big, &h_s, reuse_little_gates);
}

ToyMoEModel build_model(const ModelSpec& spec) { return ToyMoEModel(spec); }

namespace {

int sample_token(std::span<const double> probs, const Sampling& sampling, Rng& rng) {
    if (sampling.kind == SamplingKind::Greedy) return argmax(probs);
    std::vector<double> logits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        logits[i] = std::log(std::max(probs[i], 1e-300)) / sampling.temperature;
    }
    const auto tempered = softmax(logits);
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < tempered.size(); ++i) {
        acc += tempered[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(tempered.size()) - 1;
}

}  // namespace

GenerationResult generate(const ToyMoEModel& model, std::span<const int> prompt, const PolicySpec& policy,
                          int max_len) {
    validate(policy);
    if (prompt.empty()) throw Error("generate: empty prompt");
    if (max_len < 1) throw Error("generate: max_len must be at least 1");

    const int eos = model.spec().eos_token;
    Rng rng(policy.sampling.seed);
    std::vector<int> y(prompt.begin(), prompt.end());
    GenerationResult out;

    while (y.back() != eos && static_cast<int>(out.tokens.size()) < max_len) {
        ForwardResult little = model.little_forward(y);
        const double confidence = *std::max_element(little.probs.begin(), little.probs.end());

        TokenDecision decision;
        decision.confidence = confidence;
        if (confidence > policy.gamma) {
            decision.accepted_by = AcceptedBy::Little;
            decision.token = sample_token(little.probs, policy.sampling, rng);
        } else {
            ForwardResult big = model.big_forward(y, little.router_states, policy.reuse_little_gates);
            decision.accepted_by = AcceptedBy::BigFallback;
            decision.token = sample_token(big.probs, policy.sampling, rng);
            decision.router_states = little.router_states;
            decision.big_selection = std::move(big.selection);
        }
        y.push_back(decision.token);
        out.tokens.push_back(decision.token);
        out.step_router_states.push_back(std::move(little.router_states));
        out.decisions.push_back(std::move(decision));
    }
    return out;
}

}  // namespace mobile
