#include "entropycache/harness.hpp"

#include <json.hpp>

#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace entropycache {

namespace {

std::string num(double v) { return nlohmann::ordered_json(v).dump(); }
std::string num(Scalar v) { return nlohmann::ordered_json(v).dump(); }

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw EngineError("WriteFailed", "cannot open " + path.string());
    }
    os << content;
    if (!os) {
        throw EngineError("WriteFailed", "short write to " + path.string());
    }
}

}  // namespace

std::string CellParams::label() const {
    std::ostringstream os;
    os << policy;
    if (policy == "entropy-cache") {
        os << "_tau" << num(tau) << "_k" << k_recent;
    } else if (policy == "static-block") {
        os << "_b" << block_size;
    }
    os << "_w" << window << "_seed" << seed;
    if (repeat > 1) {
        os << "_rep" << repeat;
    }
    return os.str();
}

GridSpec parse_grid(const std::vector<std::string>& entries) {
    GridSpec grid;
    for (const std::string& entry : entries) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 >= entry.size()) {
            throw EngineError("InvalidConfig", "grid axis must look like key=v1,v2: " + entry);
        }
        const std::string key = entry.substr(0, eq);
        if (key != "tau" && key != "k" && key != "w" && key != "policy" && key != "block") {
            throw EngineError("InvalidConfig", "unknown grid axis: " + key);
        }
        std::vector<std::string> values;
        std::stringstream ss(entry.substr(eq + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) {
                values.push_back(item);
            }
        }
        if (values.empty()) {
            throw EngineError("InvalidConfig", "grid axis has no values: " + entry);
        }
        grid[key] = values;
    }
    return grid;
}

namespace {

std::vector<CellParams> expand_cells(const RunSpec& spec) {
    std::vector<CellParams> cells;
    CellParams base;
    base.policy = spec.policy;
    base.tau = spec.tau;
    base.k_recent = spec.k_recent;
    base.window = spec.decode.window;
    base.block_size = spec.block_size;
    cells.push_back(base);

    auto apply_axis = [&](const std::string& key, const std::vector<std::string>& values) {
        std::vector<CellParams> next;
        next.reserve(cells.size() * values.size());
        for (const CellParams& c : cells) {
            for (const std::string& v : values) {
                CellParams nc = c;
                if (key == "policy") {
                    nc.policy = v;
                } else if (key == "tau") {
                    nc.tau = std::stof(v);
                } else if (key == "k") {
                    nc.k_recent = std::stoi(v);
                } else if (key == "w") {
                    nc.window = std::stoi(v);
                } else if (key == "block") {
                    nc.block_size = std::stoi(v);
                }
                next.push_back(nc);
            }
        }
        cells = std::move(next);
    };
    for (const auto& [key, values] : spec.grid) {
        apply_axis(key, values);
    }

    std::vector<CellParams> seeded;
    seeded.reserve(cells.size() * spec.seeds.size() * static_cast<std::size_t>(spec.repeats));
    std::set<std::string> seen;  // axes a policy ignores would otherwise rerun the same cell
    for (const std::uint64_t seed : spec.seeds) {
        for (const CellParams& c : cells) {
            for (int r = 1; r <= spec.repeats; ++r) {
                CellParams nc = c;
                nc.seed = seed;
                nc.repeat = r;
                if (seen.insert(nc.label()).second) {
                    seeded.push_back(nc);
                }
            }
        }
    }
    return seeded;
}

CellResult run_cell(const RunSpec& spec, const CellParams& params) {
    ModelConfig config = spec.model;
    config.rng_seed = params.seed;
    ModelWeights weights = spec.weights_path.has_value() ? load_weights(*spec.weights_path)
                                                         : init_weights(config);

    DecodeConfig decode = spec.decode;
    decode.window = params.window;

    // Per-position value-vector trajectories for the PCA export.
    std::vector<std::vector<Vec>> pca_rows(spec.pca_positions.size());
    RunHooks hooks;
    if (!spec.pca_positions.empty()) {
        hooks.on_step = [&](const StepContext& ctx) {
            for (std::size_t i = 0; i < spec.pca_positions.size(); ++i) {
                const int abs_pos = ctx.state.prompt_len + spec.pca_positions[i];
                pca_rows[i].push_back(ctx.forward.last_layer_values.row(abs_pos));
            }
        };
    }

    GenerationResult result;
    std::optional<DriftAnalysis> analysis;
    if (spec.drift_analysis) {
        analysis = entropy_drift_analysis(weights, spec.prompt, decode, spec.exclude_eos,
                                          hooks);
        result = std::move(analysis->generation);
    } else {
        auto policy = make_policy(params.policy, params.tau, params.k_recent,
                                  params.block_size);
        result = run_generation(weights, spec.prompt, decode, *policy, hooks);
    }

    TraceSummary& summary = result.summary;
    summary.run.tau = params.tau;
    summary.run.k_recent = params.k_recent;
    summary.run.block_size = params.block_size;
    summary.run.seed = params.seed;

    const std::string label = params.label();
    CellResult cell;
    cell.params = params;
    cell.steps_path = spec.out_dir / (label + (spec.format == StepFormat::Jsonl
                                                   ? ".steps.jsonl"
                                                   : ".steps.csv"));
    cell.summary_path = spec.out_dir / (label + ".summary.json");
    cell.tokens_path = spec.out_dir / (label + ".tokens.txt");

    {
        std::ostringstream os;
        if (spec.format == StepFormat::Jsonl) {
            write_step_records_jsonl(os, result.records);
        } else {
            write_step_records_csv(os, result.records);
        }
        write_text_file(cell.steps_path, os.str());
    }
    write_text_file(cell.summary_path, trace_summary_to_json(summary) + "\n");
    {
        std::ostringstream os;
        for (std::size_t i = 0; i < result.tokens.size(); ++i) {
            os << (i ? "," : "") << result.tokens[i];
        }
        os << '\n';
        write_text_file(cell.tokens_path, os.str());
    }
    if (analysis.has_value()) {
        std::ostringstream os;
        write_drift_csv(os, *analysis);
        write_text_file(spec.out_dir / (label + ".drift.csv"), os.str());
    }
    for (std::size_t i = 0; i < spec.pca_positions.size(); ++i) {
        Mat rows(static_cast<Eigen::Index>(pca_rows[i].size()),
                 pca_rows[i].empty() ? 0 : pca_rows[i][0].size());
        for (std::size_t r = 0; r < pca_rows[i].size(); ++r) {
            rows.row(static_cast<Eigen::Index>(r)) = pca_rows[i][r];
        }
        const Pca2D pca = pca_project(rows);
        std::ostringstream os;
        os << "step,pc1,pc2\n";
        for (Eigen::Index r = 0; r < pca.projections.rows(); ++r) {
            os << (r + 1) << ',' << num(pca.projections(r, 0)) << ','
               << num(pca.projections(r, 1)) << '\n';
        }
        write_text_file(spec.out_dir /
                            (label + ".pca_pos" + std::to_string(spec.pca_positions[i]) +
                             ".csv"),
                        os.str());
    }

    cell.summary = std::move(summary);
    return cell;
}

}  // namespace

ComparisonRow comparison_row(const CellParams& params, const TraceSummary& summary) {
    ComparisonRow row;
    row.policy = params.policy;
    row.tau = params.tau;
    row.k_recent = params.k_recent;
    row.window = params.window;
    row.block_size = params.block_size;
    row.seed = params.seed;
    row.steps = summary.steps;
    row.tokens_per_sec = summary.tokens_per_sec;
    row.mean_recompute_ratio = summary.mean_recompute_ratio;
    row.decision_time_fraction = summary.decision_time_fraction;
    row.flops_total = summary.flops_total;
    return row;
}

namespace {

void append_row(std::ostringstream& os, const ComparisonRow& r) {
    os << r.policy << ',' << num(r.tau) << ',' << r.k_recent << ',' << r.window << ','
       << r.block_size << ',' << r.seed << ',' << r.steps << ',' << num(r.tokens_per_sec)
       << ',' << num(r.mean_recompute_ratio) << ',' << num(r.decision_time_fraction) << ','
       << r.flops_total;
}

constexpr const char* kComparisonHeader =
    "policy,tau,k,w,block,seed,steps,tokens_per_sec,mean_recompute_ratio,"
    "decision_time_fraction,flops_total";

}  // namespace

std::string comparison_table_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    os << kComparisonHeader << '\n';
    for (const ComparisonRow& r : rows) {
        append_row(os, r);
        os << '\n';
    }
    return os.str();
}

std::string speedup_table_csv(const std::vector<ComparisonRow>& rows) {
    const ComparisonRow* baseline = nullptr;
    for (const ComparisonRow& r : rows) {
        if (r.policy == "baseline") {
            baseline = &r;
            break;
        }
    }
    if (baseline == nullptr) {
        throw EngineError("NoBaselineReference", "speedups need a baseline row");
    }
    std::ostringstream os;
    os << kComparisonHeader << ",speedup_tput,speedup_flops\n";
    for (const ComparisonRow& r : rows) {
        append_row(os, r);
        const double tput = baseline->tokens_per_sec > 0.0
            ? r.tokens_per_sec / baseline->tokens_per_sec
            : 0.0;
        const double flops = r.flops_total > 0
            ? static_cast<double>(baseline->flops_total) / static_cast<double>(r.flops_total)
            : 0.0;
        os << ',' << num(tput) << ',' << num(flops) << '\n';
    }
    return os.str();
}

ComparisonRow load_summary_row(const std::filesystem::path& summary_json) {
    std::ifstream is(summary_json);
    if (!is) {
        throw EngineError("InvalidConfig", "cannot open " + summary_json.string());
    }
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception&) {
        throw EngineError("InvalidConfig", summary_json.string() + " is not summary JSON");
    }
    ComparisonRow row;
    const auto& run = j.at("run");
    row.policy = run.at("policy").get<std::string>();
    row.tau = run.at("tau").get<Scalar>();
    row.k_recent = run.at("k_recent").get<int>();
    row.window = run.at("window").get<int>();
    row.block_size = run.at("block_size").get<int>();
    row.seed = run.at("seed").get<std::uint64_t>();
    row.steps = j.at("steps").get<std::int64_t>();
    row.tokens_per_sec = j.at("tokens_per_sec").get<double>();
    row.mean_recompute_ratio = j.at("mean_recompute_ratio").get<double>();
    row.decision_time_fraction = j.at("decision_time_fraction").get<double>();
    row.flops_total = run.at("flops_total").get<std::uint64_t>();
    return row;
}

RunOutput run_spec(const RunSpec& spec) {
    if (spec.repeats < 1) {
        throw EngineError("InvalidConfig", "repeats must be at least 1");
    }
    if (spec.seeds.empty()) {
        throw EngineError("InvalidConfig", "at least one seed is required");
    }
    if (spec.drift_analysis) {
        std::vector<std::string> policies = {spec.policy};
        if (const auto it = spec.grid.find("policy"); it != spec.grid.end()) {
            policies = it->second;
        }
        for (const std::string& p : policies) {
            if (p != "baseline") {
                throw EngineError("InvalidConfig",
                                  "drift analysis needs exact states; use the baseline policy");
            }
        }
    }
    std::filesystem::create_directories(spec.out_dir);

    const std::vector<CellParams> cells = expand_cells(spec);
    std::vector<CellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) {
                return;
            }
            try {
                results[i] = run_cell(spec, cells[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                return;
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(spec.jobs, static_cast<int>(cells.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(jobs));
        for (int i = 0; i < jobs; ++i) {
            pool.emplace_back(worker);
        }
        for (std::thread& th : pool) {
            th.join();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    RunOutput out;
    out.cells = std::move(results);
    std::vector<ComparisonRow> rows;
    rows.reserve(out.cells.size());
    for (const CellResult& c : out.cells) {
        rows.push_back(comparison_row(c.params, c.summary));
    }
    out.comparison_path = spec.out_dir / "comparison.csv";
    write_text_file(out.comparison_path, comparison_table_csv(rows));
    return out;
}

}  // namespace entropycache
