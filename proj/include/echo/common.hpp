#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace echo {

using Shape = std::vector<std::int64_t>;

/// Shape/dimension violations (mismatched operands, bad axes).
class shape_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller broke an operation's contract (non-scalar loss, position out of range, ...).
class contract_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numeric failure: NaN inputs, non-finite loss.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Multiply-accumulate counter for the dense kernels (matmul, depthwise conv,
// windowed attention cores). Elementwise ops and softmax are not counted.
// Single-threaded contract: one counter per thread.
namespace mac {

inline std::uint64_t& counter() {
    thread_local std::uint64_t count = 0;
    return count;
}

inline void add(std::uint64_t n) { counter() += n; }
inline std::uint64_t now() { return counter(); }
inline void reset() { counter() = 0; }

}  // namespace mac

using Rng = std::mt19937_64;

inline double rand_normal(Rng& rng, double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    return dist(rng);
}

inline double rand_uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

inline std::int64_t rand_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
    std::uniform_int_distribution<std::int64_t> dist(lo, hi);
    return dist(rng);
}

}  // namespace echo
