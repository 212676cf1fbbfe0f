#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hyperpersona {

// ---------------------------------------------------------------------------
// Error hierarchy. Every failure the library reports derives from Error so
// callers (and the CLI) can tag it with the pipeline stage that raised it.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SchemaError : public Error { public: using Error::Error; };
class EmptyCorpusError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class CorruptionError : public Error { public: using Error::Error; };
class DimensionError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class EmptyDocumentError : public Error { public: using Error::Error; };
class DegenerateGraphError : public Error { public: using Error::Error; };
class ValidationError : public Error { public: using Error::Error; };

/// Data row that failed to parse; `row()` is the 1-based data row index
/// (header excluded).
class RowError : public Error {
public:
    RowError(std::size_t row, const std::string& what)
        : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
    [[nodiscard]] std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

// ---------------------------------------------------------------------------
// Fixed-width hashing and a counter-based random stream. Only 64-bit integer
// arithmetic is used so draws are identical across platforms.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// 64-bit FNV-1a over raw bytes.
[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                              std::uint64_t h = 0xCBF29CE484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

/// Counter-based stream: draw n (0-based) is mix64(seed + (n+1)·gamma), which
/// is exactly the SplitMix64 sequence seeded with `seed`. Identical
/// (seed, counter) pairs always give identical draws.
class RngStream {
public:
    constexpr RngStream() noexcept = default;
    constexpr explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0) noexcept
        : seed_(seed), counter_(counter) {}

    [[nodiscard]] constexpr std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] constexpr std::uint64_t counter() const noexcept { return counter_; }

    constexpr std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix64(seed_ + counter_ * kGoldenGamma);
    }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Unbiased integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw ContractError("RngStream::below: bound must be positive");
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    /// Independent child stream; the parent is not advanced.
    [[nodiscard]] constexpr RngStream split(std::uint64_t key) const noexcept {
        return RngStream(mix64(seed_ ^ mix64(key + kGoldenGamma)), 0);
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by an RngStream (std::shuffle's output is
/// implementation-defined, this is not).
template <class Range>
void shuffle_in_place(Range& range, RngStream& rng) {
    const auto n = static_cast<std::uint64_t>(std::size(range));
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        using std::swap;
        swap(range[i - 1], range[j]);
    }
}

}  // namespace hyperpersona
