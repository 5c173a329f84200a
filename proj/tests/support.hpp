#pragma once

#include "entropycache/decoding.hpp"
#include "entropycache/model.hpp"
#include "entropycache/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

// Reference implementations kept deliberately naive and structurally different
// from the library code, so agreement is evidence rather than tautology.
namespace ectest {

namespace ec = entropycache;

template <typename F>
std::string thrown_code(F&& f) {
    try {
        std::forward<F>(f)();
    } catch (const ec::EngineError& e) {
        return e.code();
    }
    return {};
}

inline std::vector<double> ref_softmax(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

inline double ref_entropy(const std::vector<double>& probs) {
    double acc = 0.0;
    for (const double p : probs) {
        if (p > 0.0) {
            acc -= p * std::log(p);
        }
    }
    return acc;
}

inline double ref_cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline ec::Mat ref_matmul(const ec::Mat& a, const ec::Mat& b) {
    ec::Mat out(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) {
                acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
            }
            out(i, j) = static_cast<ec::Scalar>(acc);
        }
    }
    return out;
}

// O(n^2) average ranks: rank_i = #smaller + (#equal + 1) / 2.
inline std::vector<double> ref_ranks(const std::vector<double>& xs) {
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        int less = 0, equal = 0;
        for (std::size_t j = 0; j < xs.size(); ++j) {
            less += xs[j] < xs[i];
            equal += xs[j] == xs[i];
        }
        ranks[i] = less + (equal + 1) / 2.0;
    }
    return ranks;
}

inline double ref_pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const auto n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - sx / n) * (ys[i] - sy / n);
        sxx += (xs[i] - sx / n) * (xs[i] - sx / n);
        syy += (ys[i] - sy / n) * (ys[i] - sy / n);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double ref_spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    return ref_pearson(ref_ranks(xs), ref_ranks(ys));
}

struct RefRecent {
    std::int64_t threshold = std::numeric_limits<std::int64_t>::min();
    std::vector<int> recent;
};

// Full-sort reference for the recency rule.
inline RefRecent ref_select_recent(const std::vector<std::int64_t>& history, int k,
                                   std::int64_t step, std::int64_t steps_since_full) {
    std::vector<std::int64_t> stamps;
    for (const std::int64_t h : history) {
        if (h != ec::kNeverDecoded) {
            stamps.push_back(h);
        }
    }
    std::sort(stamps.begin(), stamps.end(), std::greater<>());
    RefRecent ref;
    if (!stamps.empty()) {
        const auto kth = std::min<std::size_t>(static_cast<std::size_t>(k), stamps.size());
        ref.threshold = stamps[kth - 1];
    }
    ref.threshold = std::max(ref.threshold, step - steps_since_full);
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history[i] != ec::kNeverDecoded && history[i] >= ref.threshold) {
            ref.recent.push_back(static_cast<int>(i));
        }
    }
    return ref;
}

// Closed-form multiply-add count of one pass that recomputes s of L positions
// and emits logits at o of them.
inline std::uint64_t ref_forward_flops(const ec::ModelConfig& c, std::uint64_t s,
                                       std::uint64_t length, std::uint64_t o) {
    const auto d = static_cast<std::uint64_t>(c.hidden_dim);
    const auto f = static_cast<std::uint64_t>(c.ffn_dim());
    const auto heads = static_cast<std::uint64_t>(c.num_heads);
    const auto layers = static_cast<std::uint64_t>(c.num_layers);
    return layers * (4 * s * d * d + 3 * s * d * f + 2 * s * length * d +
                     3 * s * length * heads) +
           o * d * static_cast<std::uint64_t>(c.vocab_size);
}

inline std::uint64_t ref_decision_flops(std::uint64_t decoded, std::uint64_t vocab,
                                        std::uint64_t gen_len, std::uint64_t k) {
    return decoded * 4 * vocab + 3 * gen_len + k;
}

// Entropy of the two-level distribution the scripted controller emits: one
// token at probability conf, the rest uniform.
inline double two_level_entropy(double conf, int vocab) {
    const double rest = (1.0 - conf) / (vocab - 1);
    return -conf * std::log(conf) - (vocab - 1) * rest * std::log(rest);
}

inline ec::ModelConfig tiny_config() {
    ec::ModelConfig c;
    c.num_layers = 2;
    c.num_heads = 2;
    c.head_dim = 4;
    c.hidden_dim = 8;
    c.vocab_size = 32;
    c.ffn_mult = 2;
    c.max_seq_len = 256;
    c.mask_token_id = 31;
    c.rng_seed = 7;
    return c;
}

inline std::vector<int> iota_prompt(int n, int lo = 1) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        p[static_cast<std::size_t>(i)] = lo + i;
    }
    return p;
}

inline bool mat_bits_equal(const ec::Mat& a, const ec::Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.size() == 0 ||
            std::memcmp(a.data(), b.data(), sizeof(ec::Scalar) * a.size()) == 0);
}

inline bool vec_bits_equal(const ec::Vec& a, const ec::Vec& b) {
    return a.size() == b.size() &&
           (a.size() == 0 ||
            std::memcmp(a.data(), b.data(), sizeof(ec::Scalar) * a.size()) == 0);
}

inline bool weights_bits_equal(const ec::ModelWeights& a, const ec::ModelWeights& b) {
    if (a.layers.size() != b.layers.size()) {
        return false;
    }
    bool ok = mat_bits_equal(a.embedding, b.embedding) &&
              vec_bits_equal(a.final_norm, b.final_norm) &&
              mat_bits_equal(a.lm_head, b.lm_head);
    for (std::size_t l = 0; ok && l < a.layers.size(); ++l) {
        const auto& x = a.layers[l];
        const auto& y = b.layers[l];
        ok = vec_bits_equal(x.attn_norm, y.attn_norm) && mat_bits_equal(x.wq, y.wq) &&
             mat_bits_equal(x.wk, y.wk) && mat_bits_equal(x.wv, y.wv) &&
             mat_bits_equal(x.wo, y.wo) && vec_bits_equal(x.ffn_norm, y.ffn_norm) &&
             mat_bits_equal(x.w_gate, y.w_gate) && mat_bits_equal(x.w_up, y.w_up) &&
             mat_bits_equal(x.w_down, y.w_down);
    }
    return ok;
}

inline std::uint64_t cache_checksum(const ec::KVCacheSet& cache) {
    std::uint64_t h = ec::fnv1a64(nullptr, 0);
    for (int l = 0; l < cache.num_layers; ++l) {
        const auto& k = cache.k[static_cast<std::size_t>(l)];
        const auto& v = cache.v[static_cast<std::size_t>(l)];
        h = ec::fnv1a64(k.data(), sizeof(ec::Scalar) * static_cast<std::size_t>(k.size()), h);
        h = ec::fnv1a64(v.data(), sizeof(ec::Scalar) * static_cast<std::size_t>(v.size()), h);
    }
    return h;
}

// Emits two-level logit rows with a chosen argmax confidence per window row,
// standing in for the model on controlled-schedule runs.
class ScriptedLogitController final : public ec::LogitController {
public:
    // (step, row index within the window) -> argmax probability.
    std::function<double(std::int64_t, std::size_t)> confidence =
        [](std::int64_t, std::size_t row) { return row == 0 ? 0.95 : 0.3; };
    // (step, absolute position) -> token id to make the argmax.
    std::function<int(std::int64_t, int)> token;

    ec::Mat logits_for(std::int64_t step, const ec::IndexSet& window,
                       const ec::SequenceState&, int vocab_size) override {
        ec::Mat logits = ec::Mat::Zero(static_cast<Eigen::Index>(window.size()), vocab_size);
        for (std::size_t r = 0; r < window.size(); ++r) {
            const double conf = confidence(step, r);
            const int hot = token ? token(step, window[r])
                                  : (window[r] * 31 + static_cast<int>(step)) % vocab_size;
            logits(static_cast<Eigen::Index>(r), hot) =
                static_cast<ec::Scalar>(std::log(conf * (vocab_size - 1) / (1.0 - conf)));
        }
        return logits;
    }
};

}  // namespace ectest
