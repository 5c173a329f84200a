#include "entropycache/mathcore.hpp"

#include <cmath>

namespace entropycache {

Vec softmax_row(const Eigen::Ref<const Vec>& logits) {
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (!std::isfinite(logits[i])) {
            throw EngineError("NonFiniteLogits", "softmax input contains NaN or infinity");
        }
    }
    Vec out(logits.size());
    const Scalar m = logits.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    out /= static_cast<Scalar>(sum);
    return out;
}

void softmax_rows_inplace(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const Scalar mx = m.row(r).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const Scalar e = std::exp(m(r, c) - mx);
            m(r, c) = e;
            sum += e;
        }
        m.row(r) /= static_cast<Scalar>(sum);
    }
}

Scalar entropy(const Eigen::Ref<const Vec>& probabilities) {
    const Eigen::Index n = probabilities.size();
    std::vector<Scalar> sorted(probabilities.data(), probabilities.data() + n);
    std::stable_sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    for (const Scalar p : sorted) {
        if (p > 0.0f) {
            const double pd = p;
            acc -= pd * std::log(pd);
        }
    }
    const double hi = std::log(static_cast<double>(n));
    acc = std::clamp(acc, 0.0, hi);
    return static_cast<Scalar>(acc);
}

Scalar cosine_distance(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) {
        throw EngineError("ZeroNormVector", "cosine distance of a near-zero vector");
    }
    const double d = std::clamp(1.0 - dot / (na * nb), 0.0, 2.0);
    return static_cast<Scalar>(d);
}

void rotary_rotate_span(std::span<Scalar> row, double position, double base) {
    const std::size_t dim = row.size();
    for (std::size_t m = 0; 2 * m + 1 < dim; ++m) {
        const double theta = position * std::pow(base, -2.0 * static_cast<double>(m) /
                                                           static_cast<double>(dim));
        const Scalar c = static_cast<Scalar>(std::cos(theta));
        const Scalar s = static_cast<Scalar>(std::sin(theta));
        const Scalar x = row[2 * m];
        const Scalar y = row[2 * m + 1];
        row[2 * m] = x * c - y * s;
        row[2 * m + 1] = x * s + y * c;
    }
}

Mat rotary_rotate(const Eigen::Ref<const Mat>& qk, std::span<const int> positions, double base) {
    if (qk.cols() % 2 != 0) {
        throw EngineError("OddRotaryDim", "rotary rotation needs an even column count");
    }
    if (static_cast<Eigen::Index>(positions.size()) != qk.rows()) {
        throw EngineError("PositionCountMismatch", "one position per row required");
    }
    Mat out = qk;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        rotary_rotate_span({out.data() + r * out.cols(), static_cast<std::size_t>(out.cols())},
                           static_cast<double>(positions[r]), base);
    }
    return out;
}

Mat rmsnorm_rows(const Eigen::Ref<const Mat>& x, const Eigen::Ref<const Vec>& gain, Scalar eps) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar ms = x.row(r).squaredNorm() / static_cast<Scalar>(x.cols());
        const Scalar inv = 1.0f / std::sqrt(ms + eps);
        out.row(r) = x.row(r) * inv;
    }
    out.array().rowwise() *= gain.transpose().array();
    return out;
}

}  // namespace entropycache
