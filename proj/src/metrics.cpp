#include "entropycache/metrics.hpp"

#include "entropycache/mathcore.hpp"

#include <json.hpp>

#include <cmath>
#include <numeric>
#include <ostream>

namespace entropycache {

using ordered_json = nlohmann::ordered_json;

double recompute_ratio(const StepPlan& plan, int total_len) {
    if (plan.mode == StepPlan::Mode::Full) {
        return 1.0;
    }
    return static_cast<double>(plan.recompute_set.size()) / static_cast<double>(total_len);
}

DriftResult drift(const Eigen::Ref<const Mat>& previous, const Eigen::Ref<const Mat>& current) {
    if (previous.rows() != current.rows() || previous.cols() != current.cols()) {
        throw EngineError("ShapeMismatch", "drift inputs must have equal shapes");
    }
    DriftResult res;
    double acc = 0.0;
    int used = 0;
    for (Eigen::Index r = 0; r < previous.rows(); ++r) {
        const Vec a = previous.row(r);
        const Vec b = current.row(r);
        try {
            acc += cosine_distance(a, b);
            ++used;
        } catch (const EngineError& e) {
            if (e.code() != "ZeroNormVector") {
                throw;
            }
            ++res.excluded_rows;
        }
    }
    res.mean = used > 0 ? acc / used : 0.0;
    return res;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) {
            ++j;
        }
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::size_t n = xs.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw EngineError("DegenerateRanks", "constant input has no rank ordering");
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 3) {
        throw EngineError("TooFewPoints", "rank correlation needs >= 3 paired samples");
    }
    return pearson(average_ranks(xs), average_ranks(ys));
}

namespace {

constexpr double kPowerIterTol = 1e-8;
constexpr int kPowerIterMax = 1000;

// Power iteration; when `orthogonal_to` is given every iterate is projected
// onto its complement, so the result stays orthogonal even when the deflated
// matrix is pure rounding noise.
Eigen::VectorXd dominant_eigenvector(const Eigen::MatrixXd& c,
                                     const Eigen::VectorXd* orthogonal_to) {
    const Eigen::Index d = c.rows();
    const auto project = [&](Eigen::VectorXd& w) {
        if (orthogonal_to != nullptr) {
            w -= *orthogonal_to * orthogonal_to->dot(w);
        }
    };

    Eigen::Index start = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        if (c(i, i) > best) {
            best = c(i, i);
            start = i;
        }
    }
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    v[start] = 1.0;
    project(v);
    if (v.norm() < 1e-12) {  // start axis coincided with the excluded direction
        v.setZero();
        v[(start + 1) % d] = 1.0;
        project(v);
    }
    v.normalize();

    for (int it = 0; it < kPowerIterMax; ++it) {
        Eigen::VectorXd w = c * v;
        project(w);
        const double norm = w.norm();
        if (norm < 1e-30) {
            break;  // deflated to numerically nothing; keep the current vector
        }
        w /= norm;
        if ((w - v).norm() < kPowerIterTol) {
            v = w;
            break;
        }
        v = w;
    }
    // Deterministic sign: largest-magnitude component points up.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) {
        v = -v;
    }
    return v;
}

}  // namespace

Pca2D pca_project(const Eigen::Ref<const Mat>& rows) {
    const Eigen::Index t = rows.rows();
    if (t < 2 || rows.cols() < 2) {
        throw EngineError("DegenerateCovariance", "need at least two rows and two columns");
    }
    Eigen::MatrixXd x = rows.cast<double>();
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(t - 1);

    Pca2D res;
    res.total_variance = cov.trace();
    if (res.total_variance < 1e-18) {
        throw EngineError("DegenerateCovariance", "input rows are all identical");
    }

    const Eigen::VectorXd v1 = dominant_eigenvector(cov, nullptr);
    const double l1 = v1.dot(cov * v1);
    const Eigen::MatrixXd deflated = cov - l1 * (v1 * v1.transpose());
    const Eigen::VectorXd v2 = dominant_eigenvector(deflated, &v1);

    Eigen::VectorXd p1 = x * v1;
    Eigen::VectorXd p2 = x * v2;
    res.var_pc1 = p1.squaredNorm() / static_cast<double>(t - 1);
    res.var_pc2 = p2.squaredNorm() / static_cast<double>(t - 1);
    if (res.var_pc2 > res.var_pc1) {
        std::swap(res.var_pc1, res.var_pc2);
        std::swap(p1, p2);
    }
    res.projections = Mat(t, 2);
    res.projections.col(0) = p1.cast<Scalar>();
    res.projections.col(1) = p2.cast<Scalar>();
    return res;
}

namespace {

ordered_json phase_times_to_json(const PhaseTimes& p) {
    return ordered_json{{"attention", p.attention},
                        {"ffn", p.ffn},
                        {"cache_update", p.cache_update},
                        {"decision", p.decision},
                        {"other", p.other}};
}

ordered_json step_record_json(const StepRecord& r) {
    ordered_json j;
    j["step"] = r.step;
    j["mode"] = to_string(r.mode);
    j["decoded_count"] = r.decoded_count;
    j["max_entropy"] = r.max_entropy;
    j["recompute_ratio"] = r.recompute_ratio;
    if (r.drift.has_value()) {
        j["drift"] = *r.drift;
    } else {
        j["drift"] = nullptr;
    }
    j["flops_forward"] = r.flops_forward;
    j["flops_decision"] = r.flops_decision;
    j["phase_times"] = phase_times_to_json(r.phase_times);
    j["cache_bytes"] = r.cache_bytes;
    return j;
}

}  // namespace

std::string step_record_to_json(const StepRecord& r) { return step_record_json(r).dump(); }

void write_step_records_jsonl(std::ostream& os, const std::vector<StepRecord>& records) {
    for (const StepRecord& r : records) {
        os << step_record_to_json(r) << '\n';
    }
}

void write_step_records_csv(std::ostream& os, const std::vector<StepRecord>& records) {
    os << "step,mode,decoded_count,max_entropy,recompute_ratio,drift,flops_forward,"
          "flops_decision,attention_us,ffn_us,cache_update_us,decision_us,other_us,"
          "cache_bytes\n";
    for (const StepRecord& r : records) {
        os << r.step << ',' << to_string(r.mode) << ',' << r.decoded_count << ','
           << ordered_json(r.max_entropy).dump() << ','
           << ordered_json(r.recompute_ratio).dump() << ',';
        if (r.drift.has_value()) {
            os << ordered_json(*r.drift).dump();
        }
        os << ',' << r.flops_forward << ',' << r.flops_decision << ','
           << ordered_json(r.phase_times.attention).dump() << ','
           << ordered_json(r.phase_times.ffn).dump() << ','
           << ordered_json(r.phase_times.cache_update).dump() << ','
           << ordered_json(r.phase_times.decision).dump() << ','
           << ordered_json(r.phase_times.other).dump() << ',' << r.cache_bytes << '\n';
    }
}

std::string trace_summary_to_json(const TraceSummary& s) {
    ordered_json j;
    j["steps"] = s.steps;
    j["tokens_per_sec"] = s.tokens_per_sec;
    j["mean_recompute_ratio"] = s.mean_recompute_ratio;
    if (s.spearman_entropy_drift.has_value()) {
        j["spearman_entropy_drift"] = *s.spearman_entropy_drift;
    } else {
        j["spearman_entropy_drift"] = nullptr;
    }
    j["decision_time_fraction"] = s.decision_time_fraction;
    j["run"] = ordered_json{{"policy", s.run.policy},
                            {"tau", s.run.tau},
                            {"k_recent", s.run.k_recent},
                            {"window", s.run.window},
                            {"block_size", s.run.block_size},
                            {"seed", s.run.seed},
                            {"prompt_len", s.run.prompt_len},
                            {"gen_len", s.run.gen_len},
                            {"layers", s.run.layers},
                            {"hidden_dim", s.run.hidden_dim},
                            {"vocab_size", s.run.vocab_size},
                            {"flops_total", s.flops_total},
                            {"flops_forward_total", s.flops_forward_total},
                            {"flops_decision_total", s.flops_decision_total},
                            {"generated_tokens", s.generated_tokens},
                            {"wall_time_us", s.wall_time_us}};
    return j.dump(2);
}

void write_plot_columns(std::ostream& os, const std::vector<StepRecord>& records) {
    os << "# step mode decoded_count max_entropy recompute_ratio drift flops_forward "
          "flops_decision\n";
    for (const StepRecord& r : records) {
        os << r.step << ' ' << (r.mode == StepPlan::Mode::Full ? 1 : 0) << ' '
           << r.decoded_count << ' ' << ordered_json(r.max_entropy).dump() << ' '
           << ordered_json(r.recompute_ratio).dump() << ' '
           << (r.drift.has_value() ? ordered_json(*r.drift).dump() : std::string("nan")) << ' '
           << r.flops_forward << ' ' << r.flops_decision << '\n';
    }
}

}  // namespace entropycache
