#include "entropycache/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace ec = entropycache;

namespace {

std::uint64_t default_seed() {
    if (const char* env = std::getenv("ENTROPYCACHE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw CLI::ValidationError("ENTROPYCACHE_SEED must be an unsigned integer");
        }
    }
    return 1;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            seeds.push_back(std::stoull(item));
        }
    }
    if (seeds.empty()) {
        throw CLI::ValidationError("--seed needs at least one value");
    }
    return seeds;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(std::stoi(item));
        }
    }
    return out;
}

std::vector<int> resolve_prompt(const std::string& prompt, const std::string& prompt_ids,
                                int vocab_size) {
    if (!prompt_ids.empty()) {
        std::vector<int> ids = parse_int_list(prompt_ids);
        for (const int id : ids) {
            if (id < 0 || id >= vocab_size) {
                throw CLI::ValidationError("--prompt-ids contains an id outside the vocabulary");
            }
        }
        return ids;
    }
    std::string text = prompt;
    if (!text.empty() && text.front() == '@') {
        std::ifstream is(text.substr(1), std::ios::binary);
        if (!is) {
            throw CLI::ValidationError("cannot open prompt file " + text.substr(1));
        }
        std::ostringstream os;
        os << is.rdbuf();
        text = os.str();
    }
    if (text.empty()) {
        throw CLI::ValidationError("a non-empty --prompt or --prompt-ids is required");
    }
    if (vocab_size < ec::kMinVocabSize) {
        throw CLI::ValidationError("byte-level prompts need --vocab >= 259");
    }
    return ec::encode_bytes(text);
}

int cmd_run(CLI::App& app) {
    auto* cmd = app.add_subcommand("run", "run one generation or a parameter sweep");
    struct Opts {
        int layers = 2, heads = 2, head_dim = 32, vocab = 320, ffn_mult = 4;
        int max_seq_len = 2048;
        std::string seed_list;
        std::string weights;
        std::string save_weights;
        std::string prompt, prompt_ids;
        int gen_len = 64, window = 32;
        double conf = 0.9;
        std::string policy = "entropy-cache";
        double tau = 1.5;
        int k_recent = 64, block_size = 32;
        std::vector<std::string> grid;
        int jobs = 1, repeats = 1;
        std::string metrics_out = "runs";
        bool drift = false, exclude_eos = false, eos_stop = false;
        std::string pca_positions;
        std::string format = "jsonl";
    };
    auto opts = std::make_shared<Opts>();

    cmd->add_option("--layers", opts->layers, "transformer layer count");
    cmd->add_option("--heads", opts->heads, "attention head count");
    cmd->add_option("--head-dim", opts->head_dim, "per-head dimension (even)");
    cmd->add_option("--vocab", opts->vocab, "vocabulary size");
    cmd->add_option("--ffn-mult", opts->ffn_mult, "FFN width multiplier");
    cmd->add_option("--max-seq-len", opts->max_seq_len, "canvas length cap");
    cmd->add_option("--seed", opts->seed_list,
                    "RNG seed or comma list (default: ENTROPYCACHE_SEED or 1)");
    cmd->add_option("--weights", opts->weights, "load weights from an ECW1 file");
    cmd->add_option("--save-weights", opts->save_weights,
                    "write the initialized weights to an ECW1 file");
    cmd->add_option("--prompt", opts->prompt, "prompt text, or @file to read one");
    cmd->add_option("--prompt-ids", opts->prompt_ids, "comma-separated prompt token ids");
    cmd->add_option("--gen-len", opts->gen_len, "tokens to generate");
    cmd->add_option("--window", opts->window, "active mask window size");
    cmd->add_option("--conf", opts->conf, "decode confidence threshold");
    cmd->add_option("--policy", opts->policy, "baseline | static-block | entropy-cache");
    cmd->add_option("--tau", opts->tau, "entropy trigger threshold (nats)");
    cmd->add_option("--k-recent", opts->k_recent, "recency budget");
    cmd->add_option("--block-size", opts->block_size, "static-block refresh interval");
    cmd->add_option("--grid", opts->grid,
                    "sweep axes, e.g. --grid tau=0.5,1.5 k=16,64 policy=baseline,entropy-cache")
        ->expected(-1);
    cmd->add_option("--jobs", opts->jobs, "parallel sweep cells");
    cmd->add_option("--repeats", opts->repeats, "repeat each cell");
    cmd->add_option("--metrics-out", opts->metrics_out, "output directory");
    cmd->add_flag("--drift", opts->drift, "entropy vs value-drift analysis (baseline only)");
    cmd->add_flag("--exclude-eos", opts->exclude_eos,
                  "drop all-EOS decode steps from the drift correlation");
    cmd->add_option("--pca-positions", opts->pca_positions,
                    "generation-relative positions whose value trajectories get PCA projected");
    cmd->add_option("--format", opts->format, "steps file format: jsonl | csv")
        ->check(CLI::IsMember({"jsonl", "csv"}));
    cmd->add_flag("--eos-stop", opts->eos_stop,
                  "stop once the whole window decodes the EOS token");

    cmd->callback([opts, cmd]() {
        ec::RunSpec spec;
        spec.model.num_layers = opts->layers;
        spec.model.num_heads = opts->heads;
        spec.model.head_dim = opts->head_dim;
        spec.model.hidden_dim = opts->heads * opts->head_dim;
        spec.model.vocab_size = opts->vocab;
        spec.model.ffn_mult = opts->ffn_mult;
        spec.model.max_seq_len = opts->max_seq_len;
        spec.decode.gen_len = opts->gen_len;
        spec.decode.window = opts->window;
        spec.decode.confidence_threshold = static_cast<float>(opts->conf);
        spec.decode.eos_stop = opts->eos_stop;
        spec.policy = opts->policy;
        spec.tau = static_cast<float>(opts->tau);
        spec.k_recent = opts->k_recent;
        spec.block_size = opts->block_size;
        spec.seeds = opts->seed_list.empty() ? std::vector<std::uint64_t>{default_seed()}
                                             : parse_seed_list(opts->seed_list);
        spec.repeats = opts->repeats;
        spec.grid = ec::parse_grid(opts->grid);
        spec.jobs = opts->jobs;
        spec.out_dir = opts->metrics_out;
        spec.format = opts->format == "csv" ? ec::StepFormat::Csv : ec::StepFormat::Jsonl;
        spec.drift_analysis = opts->drift;
        spec.exclude_eos = opts->exclude_eos;
        spec.pca_positions = parse_int_list(opts->pca_positions);
        if (opts->drift && cmd->count("--policy") == 0) {
            spec.policy = "baseline";
        }
        if (!opts->weights.empty()) {
            spec.weights_path = opts->weights;
            const ec::ModelWeights loaded = ec::load_weights(opts->weights);
            const ec::ModelConfig& h = loaded.config;
            auto mismatch = [&](const char* flag, int given, int stored) {
                if (cmd->count(flag) > 0 && given != stored) {
                    throw ec::EngineError("ConfigMismatch",
                                          std::string(flag) + " disagrees with the weights file");
                }
            };
            mismatch("--layers", opts->layers, h.num_layers);
            mismatch("--heads", opts->heads, h.num_heads);
            mismatch("--head-dim", opts->head_dim, h.head_dim);
            mismatch("--vocab", opts->vocab, h.vocab_size);
            mismatch("--ffn-mult", opts->ffn_mult, h.ffn_mult);
            spec.model = h;
        }
        spec.prompt = resolve_prompt(opts->prompt, opts->prompt_ids, spec.model.vocab_size);

        if (!opts->save_weights.empty()) {
            ec::ModelConfig cfg = spec.model;
            cfg.rng_seed = spec.seeds.front();
            ec::save_weights(spec.weights_path ? ec::load_weights(*spec.weights_path)
                                               : ec::init_weights(cfg),
                             opts->save_weights);
        }

        const ec::RunOutput out = ec::run_spec(spec);
        for (const ec::CellResult& cell : out.cells) {
            std::cout << cell.params.label() << ": steps=" << cell.summary.steps
                      << " mean_recompute_ratio=" << cell.summary.mean_recompute_ratio
                      << " flops_total=" << cell.summary.flops_total << '\n';
        }
        std::cout << "comparison table: " << out.comparison_path.string() << '\n';
    });
    return 0;
}

int cmd_compare(CLI::App& app) {
    auto* cmd = app.add_subcommand("compare",
                                   "tabulate run summaries with speedups vs baseline");
    auto files = std::make_shared<std::vector<std::string>>();
    auto out_path = std::make_shared<std::string>();
    cmd->add_option("summaries", *files, "summary JSON files from run")->required();
    cmd->add_option("--out", *out_path, "write the CSV here instead of stdout");
    cmd->callback([files, out_path]() {
        std::vector<ec::ComparisonRow> rows;
        rows.reserve(files->size());
        for (const std::string& f : *files) {
            rows.push_back(ec::load_summary_row(f));
        }
        const std::string csv = ec::speedup_table_csv(rows);
        if (out_path->empty()) {
            std::cout << csv;
        } else {
            std::ofstream os(*out_path, std::ios::trunc);
            if (!os) {
                throw ec::EngineError("WriteFailed", "cannot open " + *out_path);
            }
            os << csv;
        }
    });
    return 0;
}

int cmd_columns(CLI::App& app) {
    auto* cmd = app.add_subcommand("columns",
                                   "convert a steps JSONL trace to gnuplot-ready columns");
    auto in_path = std::make_shared<std::string>();
    cmd->add_option("trace", *in_path, "steps.jsonl file")->required()
        ->check(CLI::ExistingFile);
    cmd->callback([in_path]() {
        std::ifstream is(*in_path);
        std::vector<ec::StepRecord> records;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) {
                continue;
            }
            const auto j = nlohmann::json::parse(line);
            ec::StepRecord r;
            r.step = j.at("step").get<std::int64_t>();
            r.mode = j.at("mode").get<std::string>() == "Full"
                ? ec::StepPlan::Mode::Full
                : ec::StepPlan::Mode::Partial;
            r.decoded_count = j.at("decoded_count").get<int>();
            r.max_entropy = j.at("max_entropy").get<float>();
            r.recompute_ratio = j.at("recompute_ratio").get<double>();
            if (!j.at("drift").is_null()) {
                r.drift = j.at("drift").get<double>();
            }
            r.flops_forward = j.at("flops_forward").get<std::uint64_t>();
            r.flops_decision = j.at("flops_decision").get<std::uint64_t>();
            records.push_back(r);
        }
        ec::write_plot_columns(std::cout, records);
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale masked-diffusion inference engine with pluggable KV-cache "
                 "policies"};
    app.require_subcommand(1);
    cmd_run(app);
    cmd_compare(app);
    cmd_columns(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const ec::EngineError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
