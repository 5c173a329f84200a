#include "entropycache/analysis.hpp"

#include <json.hpp>

#include <ostream>

namespace entropycache {

DriftAnalysis entropy_drift_analysis(const ModelWeights& weights,
                                     const std::vector<int>& prompt,
                                     const DecodeConfig& config, bool exclude_eos,
                                     const RunHooks& extra) {
    DriftAnalysis out;
    BaselinePolicy policy;

    Mat previous_values;
    std::vector<double> drifts;
    std::vector<bool> eos_flags;
    RunHooks hooks;
    hooks.logit_controller = extra.logit_controller;
    hooks.on_step = [&](const StepContext& ctx) {
        if (previous_values.size() > 0) {
            drifts.push_back(drift(previous_values, ctx.forward.last_layer_values).mean);
        }
        previous_values = ctx.forward.last_layer_values;
        out.entropy_series.push_back(static_cast<double>(ctx.record.max_entropy));
        eos_flags.push_back(ctx.record.all_eos);
        if (extra.on_step) {
            extra.on_step(ctx);
        }
    };

    out.generation = run_generation(weights, prompt, config, policy, hooks);

    // Pair j: entropy of step j's decode against drift observed at step j+1.
    for (std::size_t j = 0; j + 1 < out.entropy_series.size(); ++j) {
        DriftPoint p;
        p.step = static_cast<std::int64_t>(j + 1);
        p.entropy = out.entropy_series[j];
        p.drift = drifts[j];
        p.eos_step = eos_flags[j];
        out.points.push_back(p);
    }

    std::vector<double> xs, ys;
    for (const DriftPoint& p : out.points) {
        if (exclude_eos && p.eos_step) {
            ++out.excluded_eos;
            continue;
        }
        xs.push_back(p.entropy);
        ys.push_back(p.drift);
    }
    if (xs.size() >= 3) {
        try {
            out.rho = spearman(xs, ys);
        } catch (const EngineError& e) {
            if (e.code() != "DegenerateRanks") {
                throw;
            }
        }
    }

    TraceSummary& s = out.generation.summary;
    s.spearman_entropy_drift = out.rho;
    for (std::size_t j = 0; j < drifts.size(); ++j) {
        out.generation.records[j + 1].drift = drifts[j];
    }
    return out;
}

void write_drift_csv(std::ostream& os, const DriftAnalysis& analysis) {
    os << "step,entropy,drift,eos\n";
    for (const DriftPoint& p : analysis.points) {
        os << p.step << ',' << nlohmann::json(p.entropy).dump() << ','
           << nlohmann::json(p.drift).dump() << ',' << (p.eos_step ? 1 : 0) << '\n';
    }
}

}  // namespace entropycache
