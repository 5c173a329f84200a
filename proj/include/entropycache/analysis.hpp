#pragma once

#include "entropycache/decoding.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace entropycache {

struct DriftPoint {
    std::int64_t step = 0;   // decode step that produced the entropy
    double entropy = 0.0;    // max decoded entropy of that step
    double drift = 0.0;      // value drift measured at the following step
    bool eos_step = false;   // the decode consisted entirely of EOS tokens
};

struct DriftAnalysis {
    std::vector<DriftPoint> points;        // one per consecutive step pair
    std::vector<double> entropy_series;    // per-step max decoded entropy
    std::optional<double> rho;             // Spearman over the paired series
    int excluded_eos = 0;                  // pairs dropped by EOS exclusion
    GenerationResult generation;
};

/// Runs a generation under the always-recompute policy (exact states) and
/// pairs each step's max decoded entropy with the drift of the last-layer
/// value vectors measured at the following step. rho is reported when at
/// least three usable pairs exist and the series are not constant.
/// extra hooks, when given, observe the same run.
DriftAnalysis entropy_drift_analysis(const ModelWeights& weights,
                                     const std::vector<int>& prompt,
                                     const DecodeConfig& config, bool exclude_eos = false,
                                     const RunHooks& extra = {});

/// CSV rows step,entropy,drift,eos; one row per consecutive step pair.
void write_drift_csv(std::ostream& os, const DriftAnalysis& analysis);

}  // namespace entropycache
