#pragma once

#include "entropycache/common.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace entropycache {

/// Decode-history entry for a generation position that has not been decoded.
inline constexpr std::int64_t kNeverDecoded = std::numeric_limits<std::int64_t>::min();

/// Largest entropy, in nats, over the probability vectors of this step's
/// decoded tokens. Throws EngineError("NoDecodedTokens") on an empty set.
Scalar max_decoded_entropy(const std::vector<Vec>& decoded_probabilities);

/// Stamps history[i] = step for every decoded generation-relative index.
/// Throws EngineError("DoubleDecode") if an index already carries a stamp.
void update_history(std::vector<std::int64_t>& history, const IndexSet& decoded_relative,
                    std::int64_t step);

struct RecentSelection {
    IndexSet recent;          // generation-relative indices, sorted
    std::int64_t threshold;   // stamp cutoff actually applied
    int considered;           // min(k, number of decoded positions)
};

/// Picks the recency set: takes the k freshest decode stamps (stamp ties
/// prefer the larger position index), then keeps every position whose stamp
/// reaches max(k-th freshest stamp, step - steps_since_full). Never-decoded
/// positions are never selected. The returned set can exceed k only when
/// several positions share the boundary stamp.
RecentSelection select_recent(const std::vector<std::int64_t>& history, int k,
                              std::int64_t step, std::int64_t steps_since_full);

/// Scalar-operation model for one policy decision, documented in
/// docs/cost_model.md. Depends only on decoded count, vocabulary size,
/// generation length and the recency budget.
inline std::uint64_t decision_flop_model(std::uint64_t decoded_count, std::uint64_t vocab_size,
                                         std::uint64_t gen_len, std::uint64_t k) {
    return decoded_count * 4 * vocab_size + 3 * gen_len + k;
}

struct StepPlan {
    enum class Mode { Full, Partial };
    Mode mode = Mode::Full;
    IndexSet recompute_set;  // absolute positions; meaningful for Partial only
};

inline const char* to_string(StepPlan::Mode m) {
    return m == StepPlan::Mode::Full ? "Full" : "Partial";
}

/// Chooses each step's pass mode and recompute set. plan() runs before the
/// forward pass; observe() runs after decode with the decoded positions and
/// their probability vectors, and returns per-step decision accounting.
class CachePolicy {
public:
    struct Observation {
        std::optional<Scalar> max_entropy;
        std::uint64_t decision_flops = 0;
        std::size_t aux_bytes = 0;
    };

    virtual ~CachePolicy() = default;
    virtual std::string_view name() const = 0;
    virtual void begin(int prompt_len, int gen_len, int total_len) = 0;
    virtual StepPlan plan(std::int64_t step, const IndexSet& window) = 0;
    virtual Observation observe(std::int64_t step, const IndexSet& decoded_absolute,
                                const std::vector<Vec>& decoded_probabilities) = 0;
};

/// Recomputes every position every step.
class BaselinePolicy final : public CachePolicy {
public:
    std::string_view name() const override { return "baseline"; }
    void begin(int, int, int total_len) override { total_len_ = total_len; }
    StepPlan plan(std::int64_t, const IndexSet&) override { return {StepPlan::Mode::Full, {}}; }
    Observation observe(std::int64_t, const IndexSet&, const std::vector<Vec>&) override {
        return {};
    }

private:
    int total_len_ = 0;
};

/// Full pass whenever the window's leading edge enters a new fixed-size
/// block of the generation region; otherwise recomputes the window only.
class StaticBlockPolicy final : public CachePolicy {
public:
    explicit StaticBlockPolicy(int block_size);

    std::string_view name() const override { return "static-block"; }
    void begin(int prompt_len, int gen_len, int total_len) override;
    StepPlan plan(std::int64_t step, const IndexSet& window) override;
    Observation observe(std::int64_t, const IndexSet&, const std::vector<Vec>&) override {
        return {};
    }

private:
    int block_size_;
    int prompt_len_ = 0;
    std::int64_t current_block_ = -1;
};

/// Entropy-triggered recomputation: a step runs Full when the previous
/// step's max decoded entropy exceeded tau, otherwise Partial over the
/// window plus the recency-selected decoded positions.
class EntropyCachePolicy final : public CachePolicy {
public:
    struct State {
        Scalar tau = 1.5f;
        int k_recent = 64;
        bool skip_next = false;
        std::int64_t steps_since_full = 0;
        std::vector<std::int64_t> history;  // one stamp per generation position
        IndexSet recent_relative;
        std::int64_t recent_threshold = kNeverDecoded;
        int recent_considered = 0;
        Scalar last_entropy = 0.0f;
    };

    EntropyCachePolicy(Scalar tau, int k_recent);

    std::string_view name() const override { return "entropy-cache"; }
    void begin(int prompt_len, int gen_len, int total_len) override;
    StepPlan plan(std::int64_t step, const IndexSet& window) override;
    Observation observe(std::int64_t step, const IndexSet& decoded_absolute,
                        const std::vector<Vec>& decoded_probabilities) override;

    const State& state() const { return state_; }

private:
    State state_;
    int prompt_len_ = 0;
    int gen_len_ = 0;
};

/// Factory for the CLI policy names: baseline, static-block, entropy-cache.
std::unique_ptr<CachePolicy> make_policy(const std::string& name, Scalar tau, int k_recent,
                                         int block_size);

}  // namespace entropycache
