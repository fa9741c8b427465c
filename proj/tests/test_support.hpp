#pragma once

#include <filesystem>
#include <string>

#include "mobile/config.hpp"

namespace mobile::testing {

// Small model that keeps functional tests fast.
inline ModelSpec small_model(std::uint64_t seed = 7) {
    ModelSpec m;
    m.num_layers = 4;
    m.num_experts = 16;
    m.k_big = 4;
    m.k_little = 2;
    m.hidden_dim = 32;
    m.vocab_size = 64;
    m.expert_bytes = 1ull << 20;
    m.dense_bytes_per_layer = 1ull << 20;
    m.eos_token = 0;
    m.seed = seed;
    return m;
}

// Hardware with room for every expert of small_model and round timing numbers.
inline HardwareSpec roomy_hardware() {
    HardwareSpec hw;
    hw.hbm_capacity = 1ull << 30;
    hw.reserved = 0;
    hw.pcie_bandwidth = static_cast<double>(1ull << 30);
    hw.pcie_fixed_latency = 0.0;
    hw.gpu_expert_compute = 1e-3;
    hw.gpu_attn_compute = 1e-3;
    hw.lookahead_depth = 2;
    return hw;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mobile_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace mobile::testing
