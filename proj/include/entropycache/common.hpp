#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace entropycache {

// All numeric state is 32-bit; analysis-side accumulations widen to double
// where a tolerance demands it.
using Scalar = float;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Sorted, duplicate-free list of absolute sequence positions.
using IndexSet = std::vector<int>;

/// Error with a stable machine-readable code alongside the human message.
class EngineError : public std::runtime_error {
public:
    EngineError(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

inline bool index_set_contains(const IndexSet& set, int pos) {
    return std::binary_search(set.begin(), set.end(), pos);
}

inline IndexSet index_set_union(const IndexSet& a, const IndexSet& b) {
    IndexSet out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline bool index_set_includes(const IndexSet& super, const IndexSet& sub) {
    return std::includes(super.begin(), super.end(), sub.begin(), sub.end());
}

/// 64-bit FNV-1a over a byte range.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t seed = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace entropycache
