#include "entropycache/model.hpp"

#include "entropycache/mathcore.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace entropycache {

namespace {

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double elapsed_us() const {
        return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() -
                                                         start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void validate_config(const ModelConfig& c) {
    if (c.max_seq_len > kMaxSeqLenCap) {
        throw EngineError("ConfigTooLarge", "max_seq_len exceeds the supported cap");
    }
    if (c.num_layers < 1 || c.num_heads < 1 || c.head_dim < 1 || c.vocab_size < 2 ||
        c.ffn_mult < 1 || c.hidden_dim != c.num_heads * c.head_dim ||
        c.mask_token_id < 0 || c.mask_token_id >= c.vocab_size) {
        throw EngineError("InvalidConfig", "inconsistent model dimensions");
    }
    if (c.head_dim % 2 != 0) {
        throw EngineError("OddRotaryDim", "head_dim must be even for rotary rotation");
    }
}

void fill_uniform(Mat& m, std::mt19937_64& rng, int fan_in) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
        m.data()[i] = static_cast<Scalar>((2.0 * u - 1.0) * bound);
    }
}

Scalar silu(Scalar x) { return x / (1.0f + std::exp(-x)); }

}  // namespace

ModelWeights init_weights(const ModelConfig& config) {
    validate_config(config);
    const int d = config.hidden_dim;
    const int f = config.ffn_dim();
    std::mt19937_64 rng(config.rng_seed);

    ModelWeights w;
    w.config = config;
    w.embedding = Mat(config.vocab_size, d);
    fill_uniform(w.embedding, rng, d);
    w.layers.resize(static_cast<std::size_t>(config.num_layers));
    for (auto& layer : w.layers) {
        layer.attn_norm = Vec::Ones(d);
        layer.wq = Mat(d, d);
        layer.wk = Mat(d, d);
        layer.wv = Mat(d, d);
        layer.wo = Mat(d, d);
        fill_uniform(layer.wq, rng, d);
        fill_uniform(layer.wk, rng, d);
        fill_uniform(layer.wv, rng, d);
        fill_uniform(layer.wo, rng, d);
        layer.ffn_norm = Vec::Ones(d);
        layer.w_gate = Mat(d, f);
        layer.w_up = Mat(d, f);
        layer.w_down = Mat(f, d);
        fill_uniform(layer.w_gate, rng, d);
        fill_uniform(layer.w_up, rng, d);
        fill_uniform(layer.w_down, rng, f);
    }
    w.final_norm = Vec::Ones(d);
    w.lm_head = Mat(d, config.vocab_size);
    fill_uniform(w.lm_head, rng, d);
    return w;
}

namespace {

ForwardOutput forward_impl(const ModelWeights& weights, std::span<const int> tokens,
                           KVCacheSet& cache, const IndexSet& recompute_set,
                           const IndexSet& output_positions, std::int64_t step,
                           bool full_pass) {
    const ModelConfig& cfg = weights.config;
    const int d = cfg.hidden_dim;
    const int hd = cfg.head_dim;
    const int heads = cfg.num_heads;
    const int f = cfg.ffn_dim();
    const auto total_len = static_cast<int>(tokens.size());

    if (total_len != cache.total_len || cache.hidden_dim != d ||
        cache.num_layers != cfg.num_layers) {
        throw EngineError("InvalidConfig", "cache shape does not match model and tokens");
    }
    if (total_len > cfg.max_seq_len) {
        throw EngineError("ConfigTooLarge", "token canvas longer than max_seq_len");
    }
    for (const int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw EngineError("TokenOutOfRange", "token id outside the vocabulary");
        }
    }
    if (!full_pass && !cache.warm) {
        throw EngineError("ColdCache", "partial pass requested before any full pass");
    }
    if (recompute_set.empty() || !index_set_includes(recompute_set, output_positions)) {
        throw EngineError("OutputsNotRecomputed",
                          "output positions must be part of the recomputed set");
    }
    for (const int p : recompute_set) {
        if (p < 0 || p >= total_len) {
            throw EngineError("InvalidConfig", "recompute position outside the canvas");
        }
    }

    const auto s = static_cast<Eigen::Index>(recompute_set.size());
    ForwardOutput out;
    ForwardPhaseTimes& phases = out.phase_times;
    std::uint64_t flops = 0;

    Mat h(s, d);
    for (Eigen::Index i = 0; i < s; ++i) {
        h.row(i) = weights.embedding.row(tokens[recompute_set[i]]);
    }
    const Scalar inv_sqrt_hd = 1.0f / std::sqrt(static_cast<Scalar>(hd));

    for (int l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& lw = weights.layers[static_cast<std::size_t>(l)];

        Stopwatch attn_sw;
        Mat xn = rmsnorm_rows(h, lw.attn_norm);
        Mat q = matmul(xn, lw.wq);
        Mat k = matmul(xn, lw.wk);
        Mat v = matmul(xn, lw.wv);
        flops += 3 * matmul_flops(s, d, d);
        for (Eigen::Index i = 0; i < s; ++i) {
            const auto pos = static_cast<double>(recompute_set[i]);
            for (int hh = 0; hh < heads; ++hh) {
                rotary_rotate_span({q.data() + i * d + hh * hd, static_cast<std::size_t>(hd)},
                                   pos);
                rotary_rotate_span({k.data() + i * d + hh * hd, static_cast<std::size_t>(hd)},
                                   pos);
            }
        }
        phases.attention_us += attn_sw.elapsed_us();

        Stopwatch cache_sw;
        Mat& ck = cache.k[static_cast<std::size_t>(l)];
        Mat& cv = cache.v[static_cast<std::size_t>(l)];
        for (Eigen::Index i = 0; i < s; ++i) {
            ck.row(recompute_set[i]) = k.row(i);
            cv.row(recompute_set[i]) = v.row(i);
        }
        phases.cache_update_us += cache_sw.elapsed_us();

        Stopwatch attn_sw2;
        Mat ctx(s, d);
        for (int hh = 0; hh < heads; ++hh) {
            Mat scores = matmul(q.middleCols(hh * hd, hd),
                                ck.middleCols(hh * hd, hd).transpose()) * inv_sqrt_hd;
            flops += matmul_flops(s, hd, total_len);
            softmax_rows_inplace(scores);
            flops += 3ull * s * total_len;
            ctx.middleCols(hh * hd, hd) = matmul(scores, cv.middleCols(hh * hd, hd));
            flops += matmul_flops(s, total_len, hd);
        }
        h += matmul(ctx, lw.wo);
        flops += matmul_flops(s, d, d);
        phases.attention_us += attn_sw2.elapsed_us();

        Stopwatch ffn_sw;
        Mat xn2 = rmsnorm_rows(h, lw.ffn_norm);
        Mat gate = matmul(xn2, lw.w_gate);
        Mat up = matmul(xn2, lw.w_up);
        flops += 2 * matmul_flops(s, d, f);
        gate = gate.unaryExpr([](Scalar x) { return silu(x); }).cwiseProduct(up);
        h += matmul(gate, lw.w_down);
        flops += matmul_flops(s, f, d);
        phases.ffn_us += ffn_sw.elapsed_us();
    }

    Mat hn = rmsnorm_rows(h, weights.final_norm);
    const auto o = static_cast<Eigen::Index>(output_positions.size());
    Mat out_rows(o, d);
    for (Eigen::Index i = 0; i < o; ++i) {
        const auto it = std::lower_bound(recompute_set.begin(), recompute_set.end(),
                                         output_positions[i]);
        out_rows.row(i) = hn.row(it - recompute_set.begin());
    }
    out.logits = matmul(out_rows, weights.lm_head);
    flops += matmul_flops(o, d, cfg.vocab_size);

    for (const int p : recompute_set) {
        cache.stamp[static_cast<std::size_t>(p)] = step;
    }
    if (full_pass) {
        cache.warm = true;
    }
    out.last_layer_values = cache.v.back();
    out.flops = flops;
    return out;
}

}  // namespace

ForwardOutput full_forward(const ModelWeights& weights, std::span<const int> tokens,
                           KVCacheSet& cache, const IndexSet& output_positions,
                           std::int64_t step) {
    IndexSet all(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        all[i] = static_cast<int>(i);
    }
    return forward_impl(weights, tokens, cache, all, output_positions, step, true);
}

ForwardOutput partial_forward(const ModelWeights& weights, std::span<const int> tokens,
                              KVCacheSet& cache, const IndexSet& recompute_set,
                              const IndexSet& output_positions, std::int64_t step) {
    return forward_impl(weights, tokens, cache, recompute_set, output_positions, step, false);
}

}  // namespace entropycache
