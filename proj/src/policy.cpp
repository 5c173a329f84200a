#include "entropycache/policy.hpp"

#include "entropycache/mathcore.hpp"

#include <algorithm>

namespace entropycache {

Scalar max_decoded_entropy(const std::vector<Vec>& decoded_probabilities) {
    if (decoded_probabilities.empty()) {
        throw EngineError("NoDecodedTokens", "entropy of an empty decode set");
    }
    Scalar best = 0.0f;
    for (const Vec& p : decoded_probabilities) {
        best = std::max(best, entropy(p));
    }
    return best;
}

void update_history(std::vector<std::int64_t>& history, const IndexSet& decoded_relative,
                    std::int64_t step) {
    for (const int i : decoded_relative) {
        auto& slot = history[static_cast<std::size_t>(i)];
        if (slot != kNeverDecoded) {
            throw EngineError("DoubleDecode", "position already carries a decode stamp");
        }
        slot = step;
    }
}

RecentSelection select_recent(const std::vector<std::int64_t>& history, int k,
                              std::int64_t step, std::int64_t steps_since_full) {
    std::vector<std::pair<std::int64_t, int>> decoded;
    decoded.reserve(history.size());
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history[i] != kNeverDecoded) {
            decoded.emplace_back(history[i], static_cast<int>(i));
        }
    }

    RecentSelection sel;
    sel.considered = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k),
                                                            decoded.size()));
    std::int64_t boundary = kNeverDecoded;
    if (sel.considered > 0) {
        // Freshest stamps first; stamp ties prefer the larger position index.
        auto fresher = [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second > b.second;
        };
        std::nth_element(decoded.begin(), decoded.begin() + (sel.considered - 1), decoded.end(),
                         fresher);
        boundary = decoded[static_cast<std::size_t>(sel.considered - 1)].first;
    }
    sel.threshold = std::max(boundary, step - steps_since_full);
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history[i] != kNeverDecoded && history[i] >= sel.threshold) {
            sel.recent.push_back(static_cast<int>(i));
        }
    }
    return sel;
}

StaticBlockPolicy::StaticBlockPolicy(int block_size) : block_size_(block_size) {
    if (block_size < 1) {
        throw EngineError("InvalidConfig", "block size must be positive");
    }
}

void StaticBlockPolicy::begin(int prompt_len, int, int) {
    prompt_len_ = prompt_len;
    current_block_ = -1;
}

StepPlan StaticBlockPolicy::plan(std::int64_t step, const IndexSet& window) {
    const std::int64_t block = window.empty()
        ? current_block_
        : (window.front() - prompt_len_) / block_size_;
    if (step == 1 || block != current_block_) {
        current_block_ = block;
        return {StepPlan::Mode::Full, {}};
    }
    return {StepPlan::Mode::Partial, window};
}

EntropyCachePolicy::EntropyCachePolicy(Scalar tau, int k_recent) {
    if (k_recent < 1) {
        throw EngineError("InvalidConfig", "recency budget must be positive");
    }
    state_.tau = tau;
    state_.k_recent = k_recent;
}

void EntropyCachePolicy::begin(int prompt_len, int gen_len, int) {
    prompt_len_ = prompt_len;
    gen_len_ = gen_len;
    state_.skip_next = false;
    state_.steps_since_full = 0;
    state_.history.assign(static_cast<std::size_t>(gen_len), kNeverDecoded);
    state_.recent_relative.clear();
    state_.recent_threshold = kNeverDecoded;
    state_.recent_considered = 0;
    state_.last_entropy = 0.0f;
}

StepPlan EntropyCachePolicy::plan(std::int64_t step, const IndexSet& window) {
    if (step == 1 || !state_.skip_next) {
        return {StepPlan::Mode::Full, {}};
    }
    IndexSet recent_abs(state_.recent_relative.size());
    for (std::size_t i = 0; i < recent_abs.size(); ++i) {
        recent_abs[i] = state_.recent_relative[i] + prompt_len_;
    }
    return {StepPlan::Mode::Partial, index_set_union(window, recent_abs)};
}

CachePolicy::Observation EntropyCachePolicy::observe(
    std::int64_t step, const IndexSet& decoded_absolute,
    const std::vector<Vec>& decoded_probabilities) {
    IndexSet decoded_relative(decoded_absolute.size());
    for (std::size_t i = 0; i < decoded_relative.size(); ++i) {
        decoded_relative[i] = decoded_absolute[i] - prompt_len_;
    }
    update_history(state_.history, decoded_relative, step);

    // The recency set for the next step is fixed before the skip counter
    // moves, so its cutoff reflects the pass that produced these tokens.
    RecentSelection sel = select_recent(state_.history, state_.k_recent, step,
                                        state_.steps_since_full);
    state_.recent_relative = std::move(sel.recent);
    state_.recent_threshold = sel.threshold;
    state_.recent_considered = sel.considered;

    state_.last_entropy = max_decoded_entropy(decoded_probabilities);
    if (state_.last_entropy <= state_.tau) {
        state_.skip_next = true;
        ++state_.steps_since_full;
    } else {
        state_.skip_next = false;
        state_.steps_since_full = 0;
    }

    Observation obs;
    obs.max_entropy = state_.last_entropy;
    obs.decision_flops = decision_flop_model(
        decoded_probabilities.size(),
        decoded_probabilities.empty() ? 0u
                                      : static_cast<std::uint64_t>(decoded_probabilities[0].size()),
        static_cast<std::uint64_t>(gen_len_), static_cast<std::uint64_t>(state_.k_recent));
    obs.aux_bytes = state_.history.size() * sizeof(std::int64_t) +
                    state_.recent_relative.size() * sizeof(int);
    return obs;
}

std::unique_ptr<CachePolicy> make_policy(const std::string& name, Scalar tau, int k_recent,
                                         int block_size) {
    if (name == "baseline") {
        return std::make_unique<BaselinePolicy>();
    }
    if (name == "static-block") {
        return std::make_unique<StaticBlockPolicy>(block_size);
    }
    if (name == "entropy-cache") {
        return std::make_unique<EntropyCachePolicy>(tau, k_recent);
    }
    throw EngineError("InvalidConfig", "unknown policy: " + name);
}

}  // namespace entropycache
