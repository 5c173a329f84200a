#pragma once

#include "entropycache/common.hpp"

#include <span>

namespace entropycache {

/// Numerically stabilized softmax of one logit row.
/// Throws EngineError("NonFiniteLogits") when any input is NaN or infinite.
Vec softmax_row(const Eigen::Ref<const Vec>& logits);

/// Row-wise stabilized softmax, in place. Inputs are assumed finite
/// (internal attention path; the public entry point is softmax_row).
void softmax_rows_inplace(Mat& m);

/// Shannon entropy in nats with the 0 * log 0 = 0 convention.
/// Entries are summed in ascending order after a stable sort, so the result
/// is bitwise invariant under permutation of the input.
Scalar entropy(const Eigen::Ref<const Vec>& probabilities);

/// 1 - cos(a, b), clamped to [0, 2].
/// Throws EngineError("ZeroNormVector") when either norm is below 1e-12.
Scalar cosine_distance(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b);

/// Rotates consecutive element pairs (2m, 2m+1) of one row slice by
/// theta_m = position * base^(-2m / dim). dim = row.size() must be even.
void rotary_rotate_span(std::span<Scalar> row, double position, double base = 10000.0);

/// Applies rotary_rotate_span to every row, using positions[i] for row i.
/// Throws EngineError("OddRotaryDim") when the column count is odd.
Mat rotary_rotate(const Eigen::Ref<const Mat>& qk, std::span<const int> positions,
                  double base = 10000.0);

/// Row-wise RMS normalization with a learned per-column gain.
Mat rmsnorm_rows(const Eigen::Ref<const Mat>& x, const Eigen::Ref<const Vec>& gain,
                 Scalar eps = 1e-6f);

/// Dense product. Thin wrapper so callers account multiply-adds in one place.
inline Mat matmul(const Eigen::Ref<const Mat>& a, const Eigen::Ref<const Mat>& b) {
    return a * b;
}

/// Multiply-add count of matmul(a, b) with the shapes (m x k) * (k x n).
inline std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t k, std::uint64_t n) {
    return m * k * n;
}

}  // namespace entropycache
