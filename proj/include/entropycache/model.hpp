#pragma once

#include "entropycache/common.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace entropycache {

inline constexpr int kMaxSeqLenCap = 16384;

struct ModelConfig {
    int num_layers = 2;
    int num_heads = 2;
    int head_dim = 32;
    int hidden_dim = 64;  // num_heads * head_dim
    int vocab_size = 320;
    int ffn_mult = 4;
    int max_seq_len = 2048;
    int mask_token_id = 256;
    std::uint64_t rng_seed = 1;

    int ffn_dim() const { return ffn_mult * hidden_dim; }
};

struct LayerWeights {
    Vec attn_norm;
    Mat wq, wk, wv, wo;
    Vec ffn_norm;
    Mat w_gate, w_up, w_down;
};

struct ModelWeights {
    ModelConfig config;
    Mat embedding;  // vocab_size x hidden_dim
    std::vector<LayerWeights> layers;
    Vec final_norm;
    Mat lm_head;  // hidden_dim x vocab_size
};

/// Per-layer K/V rows for every canvas position, plus per-position stamps
/// recording the step that last recomputed each row. Keys are stored
/// post-rotation, so cached rows can be attended to without touching them.
struct KVCacheSet {
    int num_layers = 0;
    int total_len = 0;
    int hidden_dim = 0;
    std::vector<Mat> k;  // one total_len x hidden_dim matrix per layer
    std::vector<Mat> v;
    std::vector<std::int64_t> stamp;
    bool warm = false;

    KVCacheSet() = default;
    KVCacheSet(int layers, int len, int hidden)
        : num_layers(layers), total_len(len), hidden_dim(hidden),
          k(layers, Mat::Zero(len, hidden)), v(layers, Mat::Zero(len, hidden)),
          stamp(static_cast<std::size_t>(len), -1) {}

    /// Analytic footprint of the cached K/V matrices in bytes.
    std::size_t bytes() const {
        return 2ull * num_layers * total_len * hidden_dim * sizeof(Scalar);
    }
};

struct ForwardPhaseTimes {
    double attention_us = 0.0;
    double ffn_us = 0.0;
    double cache_update_us = 0.0;
};

struct ForwardOutput {
    Mat logits;             // |output_positions| x vocab_size
    Mat last_layer_values;  // total_len x hidden_dim, copy of the last layer's V cache
    std::uint64_t flops = 0;
    ForwardPhaseTimes phase_times;
};

/// Deterministically fills all weight tensors from rng_seed. Matrix entries
/// are uniform on [-sqrt(3)/sqrt(fan_in), +sqrt(3)/sqrt(fan_in)], giving a
/// standard deviation of 1/sqrt(fan_in); norm gains start at one.
/// Throws EngineError("ConfigTooLarge") past the max_seq_len cap.
ModelWeights init_weights(const ModelConfig& config);

/// Recomputes every position: embeds the whole canvas, refreshes all cache
/// rows, and returns logits at output_positions. Valid on a cold cache.
ForwardOutput full_forward(const ModelWeights& weights, std::span<const int> tokens,
                           KVCacheSet& cache, const IndexSet& output_positions,
                           std::int64_t step);

/// Recomputes only recompute_set, attending against all cached rows; rows
/// outside the set stay bitwise untouched. Requires a warm cache and
/// recompute_set >= output_positions.
ForwardOutput partial_forward(const ModelWeights& weights, std::span<const int> tokens,
                              KVCacheSet& cache, const IndexSet& recompute_set,
                              const IndexSet& output_positions, std::int64_t step);

}  // namespace entropycache
