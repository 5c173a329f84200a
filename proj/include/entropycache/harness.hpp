#pragma once

#include "entropycache/analysis.hpp"
#include "entropycache/decoding.hpp"
#include "entropycache/weightsio.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace entropycache {

enum class StepFormat { Jsonl, Csv };

/// One grid axis: a policy list or numeric values for tau / k / w / block.
using GridSpec = std::map<std::string, std::vector<std::string>>;

struct RunSpec {
    ModelConfig model;
    DecodeConfig decode;
    std::vector<int> prompt;

    std::string policy = "entropy-cache";
    Scalar tau = 1.5f;
    int k_recent = 64;
    int block_size = 32;

    std::vector<std::uint64_t> seeds = {1};
    int repeats = 1;
    GridSpec grid;
    int jobs = 1;

    std::filesystem::path out_dir = "runs";
    StepFormat format = StepFormat::Jsonl;
    bool drift_analysis = false;
    bool exclude_eos = false;
    std::vector<int> pca_positions;  // generation-relative indices

    std::optional<std::filesystem::path> weights_path;  // load instead of init
};

struct CellParams {
    std::string policy;
    Scalar tau = 1.5f;
    int k_recent = 64;
    int window = 32;
    int block_size = 32;
    std::uint64_t seed = 1;
    int repeat = 1;

    std::string label() const;
};

struct CellResult {
    CellParams params;
    TraceSummary summary;
    std::filesystem::path steps_path;
    std::filesystem::path summary_path;
    std::filesystem::path tokens_path;
};

struct RunOutput {
    std::vector<CellResult> cells;
    std::filesystem::path comparison_path;  // empty when a single cell ran
};

/// Expands the grid/seed/repeat cross product, runs every cell (optionally
/// across threads), and writes per-cell step records, summary, and token
/// files plus one comparison table across cells.
RunOutput run_spec(const RunSpec& spec);

/// `tau=0.5,1.0 k=16,64 policy=baseline,entropy-cache` style axis list.
GridSpec parse_grid(const std::vector<std::string>& entries);

struct ComparisonRow {
    std::string policy;
    Scalar tau = 0.0f;
    int k_recent = 0;
    int window = 0;
    int block_size = 0;
    std::uint64_t seed = 0;
    std::int64_t steps = 0;
    double tokens_per_sec = 0.0;
    double mean_recompute_ratio = 0.0;
    double decision_time_fraction = 0.0;
    std::uint64_t flops_total = 0;
};

ComparisonRow comparison_row(const CellParams& params, const TraceSummary& summary);
std::string comparison_table_csv(const std::vector<ComparisonRow>& rows);

/// Adds throughput and FLOP speedup columns relative to the first baseline
/// row. Throws EngineError("NoBaselineReference") when no baseline exists.
std::string speedup_table_csv(const std::vector<ComparisonRow>& rows);

/// Reads a summary JSON written by run_spec back into a comparison row.
ComparisonRow load_summary_row(const std::filesystem::path& summary_json);

}  // namespace entropycache
