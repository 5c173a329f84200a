#pragma once

#include "entropycache/common.hpp"
#include "entropycache/metrics.hpp"
#include "entropycache/model.hpp"
#include "entropycache/policy.hpp"
#include "entropycache/tokenizer.hpp"

#include <functional>
#include <vector>

namespace entropycache {

struct DecodeConfig {
    int gen_len = 64;
    int window = 32;
    Scalar confidence_threshold = 0.9f;
    int eos_token_id = kEosTokenId;
    bool eos_stop = false;
};

struct SequenceState {
    std::vector<int> tokens;  // prompt followed by the generation canvas
    int prompt_len = 0;
    IndexSet mask_set;        // still-masked generation positions, sorted
    std::int64_t step = 0;    // steps completed so far

    int total_len() const { return static_cast<int>(tokens.size()); }
};

/// The w leftmost still-masked generation positions.
/// Throws EngineError("GenerationComplete") when nothing is masked.
IndexSet active_window(const SequenceState& state, int window);

struct DecodeOutcome {
    IndexSet decoded;              // absolute positions decoded this step
    std::vector<int> token_ids;    // chosen token per decoded position
    std::vector<Vec> probabilities;  // full probability vector per decoded position
    bool all_eos = false;
};

/// Greedy parallel decode over the window: every position whose argmax
/// probability reaches the threshold decodes; if none does, the single most
/// confident position decodes (probability ties resolve to the lowest
/// position index). logits rows must match the window.
DecodeOutcome decode_step(const SequenceState& state, const DecodeConfig& config,
                          const IndexSet& window, const Eigen::Ref<const Mat>& logits);

/// Supplies logits in place of the model's, for controlled-schedule runs.
class LogitController {
public:
    virtual ~LogitController() = default;
    virtual Mat logits_for(std::int64_t step, const IndexSet& window,
                           const SequenceState& state, int vocab_size) = 0;
};

/// Everything a per-step observer can see after the step has committed.
struct StepContext {
    const StepPlan& plan;
    const StepRecord& record;
    const ForwardOutput& forward;
    const DecodeOutcome& outcome;
    const SequenceState& state;
    const KVCacheSet& cache;
    const CachePolicy& policy;
};

struct RunHooks {
    LogitController* logit_controller = nullptr;
    std::function<void(const StepContext&)> on_step;
};

struct GenerationResult {
    std::vector<int> tokens;
    std::vector<StepRecord> records;
    TraceSummary summary;
};

/// Runs the denoising loop to completion: plans each step with the policy,
/// executes a full or partial pass, decodes, and records per-step metrics.
/// Step 1 is always a full pass over the whole canvas.
GenerationResult run_generation(const ModelWeights& weights, const std::vector<int>& prompt,
                                const DecodeConfig& config, CachePolicy& policy,
                                const RunHooks& hooks = {});

}  // namespace entropycache
