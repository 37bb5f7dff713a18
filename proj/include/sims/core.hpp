#pragma once

// Shared error types, random number generation and small helpers.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sims {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid hyperparameters, shapes or flags.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable, unsupported or geometrically incompatible input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite losses or gradients, degenerate statistics.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward() on an empty tape.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Seeded generator with portable distributions. The standard library
/// distributions are implementation-defined, so uniform and normal draws are
/// derived from the raw 64-bit stream here.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n <= 1 ? 0 : engine_() % n; }

    double normal()
    {
        // Box-Muller; 1 - u keeps the log argument in (0, 1].
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::string state() const
    {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore(const std::string& s)
    {
        std::istringstream is(s);
        is >> engine_;
        if (!is)
            throw DataError("corrupt RNG state");
    }

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over raw bytes; used to fingerprint parameter blocks.
inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace sims
