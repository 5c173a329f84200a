#include "entropycache/decoding.hpp"

#include "entropycache/mathcore.hpp"

#include <chrono>

namespace entropycache {

namespace {

using Clock = std::chrono::steady_clock;

double us_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::micro>(b - a).count();
}

}  // namespace

IndexSet active_window(const SequenceState& state, int window) {
    if (state.mask_set.empty()) {
        throw EngineError("GenerationComplete", "no masked positions remain");
    }
    if (window < 1) {
        throw EngineError("InvalidConfig", "window must be at least one position");
    }
    const auto w = std::min<std::size_t>(static_cast<std::size_t>(window),
                                         state.mask_set.size());
    return IndexSet(state.mask_set.begin(), state.mask_set.begin() + static_cast<long>(w));
}

DecodeOutcome decode_step(const SequenceState& state, const DecodeConfig& config,
                          const IndexSet& window, const Eigen::Ref<const Mat>& logits) {
    if (window.empty()) {
        throw EngineError("GenerationComplete", "decode called with an empty window");
    }
    if (logits.rows() != static_cast<Eigen::Index>(window.size())) {
        throw EngineError("ShapeMismatch", "one logit row per window position required");
    }

    const auto rows = static_cast<std::size_t>(logits.rows());
    std::vector<Vec> probs(rows);
    std::vector<Scalar> confidence(rows);
    std::vector<int> argmax(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        probs[r] = softmax_row(logits.row(static_cast<Eigen::Index>(r)));
        Eigen::Index arg = 0;
        confidence[r] = probs[r].maxCoeff(&arg);
        argmax[r] = static_cast<int>(arg);
    }

    std::vector<std::size_t> chosen;
    for (std::size_t r = 0; r < rows; ++r) {
        if (confidence[r] >= config.confidence_threshold) {
            chosen.push_back(r);
        }
    }
    if (chosen.empty()) {
        // Progress guarantee: decode the single most confident position;
        // exact ties resolve to the lowest position index.
        std::size_t best = 0;
        for (std::size_t r = 1; r < rows; ++r) {
            if (confidence[r] > confidence[best]) {
                best = r;
            }
        }
        chosen.push_back(best);
    }

    DecodeOutcome out;
    out.all_eos = true;
    for (const std::size_t r : chosen) {
        out.decoded.push_back(window[r]);
        out.token_ids.push_back(argmax[r]);
        out.probabilities.push_back(std::move(probs[r]));
        if (argmax[r] != config.eos_token_id) {
            out.all_eos = false;
        }
    }
    (void)state;
    return out;
}

GenerationResult run_generation(const ModelWeights& weights, const std::vector<int>& prompt,
                                const DecodeConfig& config, CachePolicy& policy,
                                const RunHooks& hooks) {
    const ModelConfig& mc = weights.config;
    if (prompt.empty()) {
        throw EngineError("EmptyPrompt", "generation needs at least one prompt token");
    }
    if (config.gen_len < 1) {
        throw EngineError("InvalidConfig", "gen_len must be positive");
    }
    if (config.window < 1 || config.window > config.gen_len) {
        throw EngineError("InvalidConfig", "window must satisfy 1 <= w <= gen_len");
    }
    if (!(config.confidence_threshold > 0.0f) || config.confidence_threshold > 1.0f) {
        throw EngineError("InvalidConfig", "confidence threshold must be in (0, 1]");
    }
    const int prompt_len = static_cast<int>(prompt.size());
    const int total_len = prompt_len + config.gen_len;
    if (total_len > mc.max_seq_len) {
        throw EngineError("ConfigTooLarge", "prompt plus gen_len exceeds max_seq_len");
    }

    SequenceState state;
    state.tokens = prompt;
    state.tokens.resize(static_cast<std::size_t>(total_len), mc.mask_token_id);
    state.prompt_len = prompt_len;
    state.mask_set.resize(static_cast<std::size_t>(config.gen_len));
    for (int i = 0; i < config.gen_len; ++i) {
        state.mask_set[static_cast<std::size_t>(i)] = prompt_len + i;
    }

    KVCacheSet cache(mc.num_layers, total_len, mc.hidden_dim);
    policy.begin(prompt_len, config.gen_len, total_len);

    GenerationResult result;
    double total_wall_us = 0.0;
    double decision_wall_us = 0.0;
    int generated = 0;

    const auto run_start = Clock::now();
    while (!state.mask_set.empty()) {
        const std::int64_t t = state.step + 1;
        const auto step_start = Clock::now();

        const IndexSet window = active_window(state, config.window);
        const auto plan_start = Clock::now();
        StepPlan plan = policy.plan(t, window);
        double decision_us = us_between(plan_start, Clock::now());
        if (plan.mode == StepPlan::Mode::Partial &&
            (plan.recompute_set.empty() || !index_set_includes(plan.recompute_set, window))) {
            throw EngineError("OutputsNotRecomputed",
                              "partial plan does not cover the active window");
        }

        ForwardOutput fwd = plan.mode == StepPlan::Mode::Full
            ? full_forward(weights, state.tokens, cache, window, t)
            : partial_forward(weights, state.tokens, cache, plan.recompute_set, window, t);

        DecodeOutcome outcome =
            hooks.logit_controller
                ? decode_step(state, config, window,
                              hooks.logit_controller->logits_for(t, window, state,
                                                                 mc.vocab_size))
                : decode_step(state, config, window, fwd.logits);

        for (std::size_t i = 0; i < outcome.decoded.size(); ++i) {
            state.tokens[static_cast<std::size_t>(outcome.decoded[i])] = outcome.token_ids[i];
        }
        IndexSet remaining;
        remaining.reserve(state.mask_set.size());
        std::set_difference(state.mask_set.begin(), state.mask_set.end(),
                            outcome.decoded.begin(), outcome.decoded.end(),
                            std::back_inserter(remaining));
        state.mask_set = std::move(remaining);
        generated += static_cast<int>(outcome.decoded.size());

        const auto observe_start = Clock::now();
        CachePolicy::Observation obs = policy.observe(t, outcome.decoded,
                                                      outcome.probabilities);
        decision_us += us_between(observe_start, Clock::now());

        StepRecord rec;
        rec.step = t;
        rec.mode = plan.mode;
        rec.decoded_count = static_cast<int>(outcome.decoded.size());
        rec.max_entropy = obs.max_entropy.has_value()
            ? *obs.max_entropy
            : max_decoded_entropy(outcome.probabilities);
        rec.recompute_ratio = plan.mode == StepPlan::Mode::Full
            ? 1.0
            : recompute_ratio(plan, total_len);
        rec.flops_forward = fwd.flops;
        rec.flops_decision = obs.decision_flops;
        rec.cache_bytes = cache.bytes() + obs.aux_bytes;
        rec.all_eos = outcome.all_eos;

        const double wall = us_between(step_start, Clock::now());
        rec.step_wall_us = wall;
        rec.phase_times.attention = fwd.phase_times.attention_us;
        rec.phase_times.ffn = fwd.phase_times.ffn_us;
        rec.phase_times.cache_update = fwd.phase_times.cache_update_us;
        rec.phase_times.decision = decision_us;
        rec.phase_times.other = std::max(0.0, wall - fwd.phase_times.attention_us -
                                                  fwd.phase_times.ffn_us -
                                                  fwd.phase_times.cache_update_us - decision_us);
        total_wall_us += wall;
        decision_wall_us += decision_us;
        state.step = t;

        if (hooks.on_step) {
            hooks.on_step(StepContext{plan, rec, fwd, outcome, state, cache, policy});
        }
        result.records.push_back(std::move(rec));

        if (config.eos_stop && outcome.all_eos && outcome.decoded.size() == window.size()) {
            break;
        }
    }
    const double run_wall_us = us_between(run_start, Clock::now());

    result.tokens = state.tokens;
    TraceSummary& s = result.summary;
    s.steps = state.step;
    s.generated_tokens = generated;
    s.wall_time_us = run_wall_us;
    s.tokens_per_sec = run_wall_us > 0.0 ? generated / (run_wall_us * 1e-6) : 0.0;
    double ratio_sum = 0.0;
    for (const StepRecord& r : result.records) {
        ratio_sum += r.recompute_ratio;
        s.flops_forward_total += r.flops_forward;
        s.flops_decision_total += r.flops_decision;
    }
    s.flops_total = s.flops_forward_total + s.flops_decision_total;
    s.mean_recompute_ratio = result.records.empty()
        ? 0.0
        : ratio_sum / static_cast<double>(result.records.size());
    s.decision_time_fraction = total_wall_us > 0.0 ? decision_wall_us / total_wall_us : 0.0;
    s.run.policy = std::string(policy.name());
    s.run.window = config.window;
    s.run.prompt_len = prompt_len;
    s.run.gen_len = config.gen_len;
    s.run.layers = mc.num_layers;
    s.run.hidden_dim = mc.hidden_dim;
    s.run.vocab_size = mc.vocab_size;
    s.run.seed = mc.rng_seed;
    return result;
}

}  // namespace entropycache
