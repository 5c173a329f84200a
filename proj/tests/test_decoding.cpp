#include "entropycache/decoding.hpp"

#include "entropycache/mathcore.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace entropycache;
using ectest::ScriptedLogitController;
using ectest::thrown_code;
using ectest::tiny_config;

namespace {

SequenceState make_state(int prompt_len, int gen_len) {
    SequenceState s;
    s.prompt_len = prompt_len;
    s.tokens.assign(static_cast<std::size_t>(prompt_len + gen_len), 0);
    for (int i = 0; i < gen_len; ++i) {
        s.mask_set.push_back(prompt_len + i);
    }
    return s;
}

struct AlwaysPartialPolicy final : CachePolicy {
    bool cover_window;
    explicit AlwaysPartialPolicy(bool cover) : cover_window(cover) {}
    std::string_view name() const override { return "always-partial"; }
    void begin(int, int, int) override {}
    StepPlan plan(std::int64_t, const IndexSet& window) override {
        return {StepPlan::Mode::Partial, cover_window ? window : IndexSet{}};
    }
    Observation observe(std::int64_t, const IndexSet&, const std::vector<Vec>&) override {
        return {};
    }
};

}  // namespace

TEST_CASE("active window takes the leftmost masked positions") {
    SequenceState s = make_state(4, 6);
    CHECK(active_window(s, 3) == IndexSet{4, 5, 6});
    CHECK(active_window(s, 10) == IndexSet{4, 5, 6, 7, 8, 9});

    s.mask_set = {5, 8};
    CHECK(active_window(s, 2) == IndexSet{5, 8});

    s.mask_set.clear();
    CHECK(thrown_code([&] { active_window(s, 2); }) == "GenerationComplete");
    s.mask_set = {4};
    CHECK(thrown_code([&] { active_window(s, 0); }) == "InvalidConfig");
}

TEST_CASE("decode commits every row above the confidence threshold") {
    const SequenceState s = make_state(0, 4);
    DecodeConfig cfg;
    cfg.confidence_threshold = 0.9f;

    Mat logits = Mat::Zero(3, 8);
    logits(0, 2) = 10.0f;   // confident
    logits(1, 5) = 0.5f;    // flat-ish
    logits(2, 7) = 9.0f;    // confident
    const DecodeOutcome out = decode_step(s, cfg, {0, 1, 2}, logits);
    CHECK(out.decoded == IndexSet{0, 2});
    CHECK(out.token_ids == std::vector<int>{2, 7});
    REQUIRE(out.probabilities.size() == 2);
    const Vec expect0 = softmax_row(logits.row(0).transpose());
    CHECK(ectest::vec_bits_equal(out.probabilities[0], expect0));
    CHECK_FALSE(out.all_eos);
}

TEST_CASE("decode falls back to the single most confident row") {
    const SequenceState s = make_state(0, 4);
    DecodeConfig cfg;
    cfg.confidence_threshold = 0.99f;

    Mat logits = Mat::Zero(3, 8);
    logits(0, 1) = 1.0f;
    logits(1, 2) = 2.0f;
    logits(2, 3) = 1.5f;
    const DecodeOutcome out = decode_step(s, cfg, {0, 1, 2}, logits);
    CHECK(out.decoded == IndexSet{1});
    CHECK(out.token_ids == std::vector<int>{2});
}

TEST_CASE("fallback confidence ties resolve to the lowest position") {
    const SequenceState s = make_state(0, 4);
    DecodeConfig cfg;
    cfg.confidence_threshold = 1.0f;

    Mat logits = Mat::Zero(3, 8);
    logits(0, 4) = 2.0f;
    logits(1, 4) = 2.0f;
    logits(2, 4) = 2.0f;
    const DecodeOutcome out = decode_step(s, cfg, {1, 2, 3}, logits);
    CHECK(out.decoded == IndexSet{1});
}

TEST_CASE("decode validates shapes and flags all-EOS steps") {
    const SequenceState s = make_state(0, 4);
    DecodeConfig cfg;
    cfg.eos_token_id = 7;

    Mat logits = Mat::Zero(2, 8);
    CHECK(thrown_code([&] { decode_step(s, cfg, {0, 1, 2}, logits); }) == "ShapeMismatch");

    logits(0, 7) = 12.0f;
    logits(1, 7) = 12.0f;
    const DecodeOutcome out = decode_step(s, cfg, {0, 1}, logits);
    CHECK(out.all_eos);
}

TEST_CASE("baseline generation decodes every position exactly once") {
    const ModelConfig mc = tiny_config();
    const ModelWeights w = init_weights(mc);
    DecodeConfig cfg;
    cfg.gen_len = 12;
    cfg.window = 4;

    BaselinePolicy policy;
    int hook_steps = 0;
    RunHooks hooks;
    hooks.on_step = [&](const StepContext& ctx) {
        ++hook_steps;
        CHECK(ctx.record.step == ctx.state.step);
        CHECK(ctx.plan.mode == ctx.record.mode);
        CHECK(ctx.record.mode == StepPlan::Mode::Full);
        CHECK(ctx.record.recompute_ratio == 1.0);
        CHECK(ctx.record.max_entropy ==
              max_decoded_entropy(ctx.outcome.probabilities));
        CHECK(ctx.record.flops_decision == 0);
        CHECK(ctx.record.cache_bytes == ctx.cache.bytes());
    };
    const GenerationResult res = run_generation(w, ectest::iota_prompt(4), cfg, policy, hooks);

    CHECK(hook_steps == static_cast<int>(res.records.size()));
    CHECK(res.summary.steps == static_cast<std::int64_t>(res.records.size()));
    CHECK(res.summary.generated_tokens == cfg.gen_len);
    CHECK(res.summary.mean_recompute_ratio == 1.0);
    CHECK(res.summary.steps <= cfg.gen_len);
    CHECK(res.summary.tokens_per_sec > 0.0);
    CHECK(res.summary.wall_time_us > 0.0);
    CHECK(res.summary.decision_time_fraction >= 0.0);
    CHECK(res.summary.decision_time_fraction < 1.0);
    CHECK(res.tokens.size() == static_cast<std::size_t>(4 + cfg.gen_len));

    int decoded = 0;
    for (const StepRecord& r : res.records) {
        CHECK(r.decoded_count >= 1);
        const std::uint64_t remaining = 12 - static_cast<std::uint64_t>(decoded);
        decoded += r.decoded_count;
        CHECK(r.flops_forward ==
              ectest::ref_forward_flops(mc, 16, 16, std::min<std::uint64_t>(4, remaining)));
    }
    CHECK(decoded == cfg.gen_len);
    CHECK(res.records.front().mode == StepPlan::Mode::Full);
}

TEST_CASE("scripted schedule drives the entropy policy's mode sequence") {
    const ModelConfig mc = tiny_config();
    const ModelWeights w = init_weights(mc);
    DecodeConfig cfg;
    cfg.gen_len = 12;
    cfg.window = 4;

    ScriptedLogitController controller;
    controller.confidence = [](std::int64_t step, std::size_t row) {
        if (row != 0) {
            return 0.3;
        }
        return step % 3 == 0 ? 0.5 : 0.95;
    };
    RunHooks hooks;
    hooks.logit_controller = &controller;

    EntropyCachePolicy policy(1.5f, 64);
    const GenerationResult res = run_generation(w, ectest::iota_prompt(3), cfg, policy, hooks);

    REQUIRE(res.summary.steps == 12);  // exactly one decode per step
    for (const StepRecord& r : res.records) {
        CHECK(r.decoded_count == 1);
        const double conf = r.step % 3 == 0 ? 0.5 : 0.95;
        CHECK(r.max_entropy ==
              doctest::Approx(ectest::two_level_entropy(conf, mc.vocab_size)).epsilon(1e-5));
        const auto expected = r.step == 1 || (r.step - 1) % 3 == 0 ? StepPlan::Mode::Full
                                                                   : StepPlan::Mode::Partial;
        CHECK(r.mode == expected);
        if (r.mode == StepPlan::Mode::Partial) {
            CHECK(r.recompute_ratio > 0.0);
            CHECK(r.recompute_ratio < 1.0);
            CHECK(r.flops_decision ==
                  ectest::ref_decision_flops(1, mc.vocab_size, cfg.gen_len, 64));
        }
    }
}

TEST_CASE("scripted tokens land verbatim in the canvas") {
    const ModelConfig mc = tiny_config();
    const ModelWeights w = init_weights(mc);
    DecodeConfig cfg;
    cfg.gen_len = 8;
    cfg.window = 8;

    ScriptedLogitController controller;
    controller.confidence = [](std::int64_t, std::size_t) { return 0.97; };
    controller.token = [&](std::int64_t, int pos) { return (pos * 3 + 1) % mc.vocab_size; };
    RunHooks hooks;
    hooks.logit_controller = &controller;

    BaselinePolicy policy;
    const GenerationResult res = run_generation(w, ectest::iota_prompt(2), cfg, policy, hooks);
    CHECK(res.summary.steps == 1);  // every window row above threshold at once
    for (int pos = 2; pos < 10; ++pos) {
        CHECK(res.tokens[static_cast<std::size_t>(pos)] == (pos * 3 + 1) % mc.vocab_size);
    }
}

TEST_CASE("eos stop ends the run once a whole window decodes to EOS") {
    const ModelConfig mc = tiny_config();
    const ModelWeights w = init_weights(mc);
    DecodeConfig cfg;
    cfg.gen_len = 8;
    cfg.window = 4;
    cfg.eos_token_id = 9;
    cfg.eos_stop = true;

    ScriptedLogitController controller;
    controller.confidence = [](std::int64_t step, std::size_t row) {
        if (step < 3) {
            return row == 0 ? 0.95 : 0.3;
        }
        return 0.95;
    };
    controller.token = [&](std::int64_t step, int pos) {
        return step < 3 ? pos % mc.vocab_size : 9;
    };
    RunHooks hooks;
    hooks.logit_controller = &controller;

    BaselinePolicy policy;
    const GenerationResult res = run_generation(w, ectest::iota_prompt(2), cfg, policy, hooks);
    CHECK(res.summary.steps == 3);
    CHECK(res.records.back().all_eos);
    CHECK(res.records.back().decoded_count == 4);
    CHECK(res.summary.generated_tokens == 6);
}

TEST_CASE("generation validates its inputs") {
    const ModelConfig mc = tiny_config();
    const ModelWeights w = init_weights(mc);
    BaselinePolicy policy;
    DecodeConfig cfg;
    cfg.gen_len = 8;
    cfg.window = 4;

    CHECK(thrown_code([&] { run_generation(w, {}, cfg, policy); }) == "EmptyPrompt");

    DecodeConfig bad = cfg;
    bad.gen_len = 0;
    CHECK(thrown_code([&] { run_generation(w, {1}, bad, policy); }) == "InvalidConfig");
    bad = cfg;
    bad.window = 9;
    CHECK(thrown_code([&] { run_generation(w, {1}, bad, policy); }) == "InvalidConfig");
    bad = cfg;
    bad.confidence_threshold = 0.0f;
    CHECK(thrown_code([&] { run_generation(w, {1}, bad, policy); }) == "InvalidConfig");

    bad = cfg;
    bad.gen_len = mc.max_seq_len;
    CHECK(thrown_code([&] { run_generation(w, {1}, bad, policy); }) == "ConfigTooLarge");
}

TEST_CASE("a partial plan that misses the window is rejected") {
    const ModelConfig mc = tiny_config();
    const ModelWeights w = init_weights(mc);
    DecodeConfig cfg;
    cfg.gen_len = 4;
    cfg.window = 2;

    AlwaysPartialPolicy uncovered(false);
    CHECK(thrown_code([&] { run_generation(w, {1}, cfg, uncovered); }) ==
          "OutputsNotRecomputed");

    // Covering the window is not enough at step one: the cache is still cold.
    AlwaysPartialPolicy covered(true);
    CHECK(thrown_code([&] { run_generation(w, {1}, cfg, covered); }) == "ColdCache");
}
