#pragma once

#include "entropycache/common.hpp"
#include "entropycache/policy.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace entropycache {

struct PhaseTimes {
    double attention = 0.0;  // all durations in microseconds
    double ffn = 0.0;
    double cache_update = 0.0;
    double decision = 0.0;
    double other = 0.0;

    double sum() const { return attention + ffn + cache_update + decision + other; }
};

struct StepRecord {
    std::int64_t step = 0;
    StepPlan::Mode mode = StepPlan::Mode::Full;
    int decoded_count = 0;
    Scalar max_entropy = 0.0f;
    double recompute_ratio = 1.0;
    std::optional<double> drift;
    std::uint64_t flops_forward = 0;
    std::uint64_t flops_decision = 0;
    PhaseTimes phase_times;
    std::size_t cache_bytes = 0;

    // Bookkeeping that never reaches the serialized record.
    bool all_eos = false;
    double step_wall_us = 0.0;
};

struct RunInfo {
    std::string policy;
    Scalar tau = 0.0f;
    int k_recent = 0;
    int window = 0;
    int block_size = 0;
    std::uint64_t seed = 0;
    int prompt_len = 0;
    int gen_len = 0;
    int layers = 0;
    int hidden_dim = 0;
    int vocab_size = 0;
};

struct TraceSummary {
    std::int64_t steps = 0;
    double tokens_per_sec = 0.0;
    double mean_recompute_ratio = 0.0;
    std::optional<double> spearman_entropy_drift;
    double decision_time_fraction = 0.0;

    std::uint64_t flops_total = 0;
    std::uint64_t flops_forward_total = 0;
    std::uint64_t flops_decision_total = 0;
    int generated_tokens = 0;
    double wall_time_us = 0.0;
    RunInfo run;
};

/// Fraction of the canvas a step recomputed; Full counts as 1.0.
double recompute_ratio(const StepPlan& plan, int total_len);

struct DriftResult {
    double mean = 0.0;
    int excluded_rows = 0;  // rows skipped because either side had ~zero norm
};

/// Mean per-row cosine distance between two equally shaped matrices.
DriftResult drift(const Eigen::Ref<const Mat>& previous, const Eigen::Ref<const Mat>& current);

/// Spearman rank correlation with average ranks for ties (Pearson on ranks).
/// Throws EngineError("DegenerateRanks") when either input is constant.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct Pca2D {
    Mat projections;  // rows x 2
    double var_pc1 = 0.0;
    double var_pc2 = 0.0;
    double total_variance = 0.0;
};

/// Projects rows onto the top two principal components, found by power
/// iteration with deflation (tolerance 1e-8, at most 1000 iterations).
/// Throws EngineError("DegenerateCovariance") when the input has no variance.
Pca2D pca_project(const Eigen::Ref<const Mat>& rows);

// Serialization. JSONL step records carry exactly the StepRecord fields;
// phase-time durations are microseconds.
std::string step_record_to_json(const StepRecord& r);
void write_step_records_jsonl(std::ostream& os, const std::vector<StepRecord>& records);
void write_step_records_csv(std::ostream& os, const std::vector<StepRecord>& records);
std::string trace_summary_to_json(const TraceSummary& s);

/// Whitespace-separated columns for plotting, one row per step.
void write_plot_columns(std::ostream& os, const std::vector<StepRecord>& records);

}  // namespace entropycache
