#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvp {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
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

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/geometry violations (bad extents, channel mismatch, invalid windows).
struct ShapeError : Error {
    using Error::Error;
};

// Malformed files, bad magic, truncated payloads, empty/unusable data.
struct DataError : Error {
    using Error::Error;
};

// NaN/Inf encountered, failed numerical invariants.
struct NumericError : Error {
    using Error::Error;
};

// train32 runs kernels in float, check64 in double. Gradient checks require
// check64 so finite differences are not drowned by rounding.
enum class Precision { train32, check64 };

template <typename T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if constexpr (std::is_same_v<T, float>)
        return Precision::train32;
    else
        return Precision::check64;
}

// Deterministic RNG. mt19937_64 output is pinned by the standard; the float
// mappings below are ours, so streams are bit-identical across platforms
// (std::uniform_real_distribution would not be).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t next_u64() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace nvp
