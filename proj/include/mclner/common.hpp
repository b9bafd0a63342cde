#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mclner {

// Exit-code classes used by the CLI: 1 usage/config, 2 data/format, 3 numeric.
enum class ErrorClass : int { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& msg) : std::runtime_error(msg), cls_(cls) {}
    ErrorClass error_class() const noexcept { return cls_; }
    int exit_code() const noexcept { return static_cast<int>(cls_); }

private:
    ErrorClass cls_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorClass::usage, m) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error(ErrorClass::data, m) {}
};
struct SchemaError : Error {
    explicit SchemaError(const std::string& m) : Error(ErrorClass::data, m) {}
};
struct OverlapError : Error {
    explicit OverlapError(const std::string& m) : Error(ErrorClass::data, m) {}
};
struct PairingError : Error {
    explicit PairingError(const std::string& m) : Error(ErrorClass::data, m) {}
};
struct CoverageError : Error {
    explicit CoverageError(const std::string& m) : Error(ErrorClass::data, m) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorClass::numeric, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorClass::numeric, m) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error(ErrorClass::numeric, m) {}
};

// Collects non-fatal events (tag repairs, skipped substitutions, placement
// violations). Callers that do not care pass nullptr.
struct Diag {
    std::vector<std::string> messages;
    void log(std::string msg) { messages.push_back(std::move(msg)); }
};

inline void diag_log(Diag* d, std::string msg) {
    if (d) d->log(std::move(msg));
}

// 64-bit FNV-1a. Used for subword bucket hashing and file checksums.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Mixes a base seed with stream tags so that per-sentence / per-step streams
// are independent and reproducible regardless of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t t : tags) h = splitmix64(h ^ t);
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    return splitmix64(splitmix64(base) ^ fnv1a64(tag));
}

// All randomness in the library flows through Rng so runs are bit-reproducible
// across platforms (no reliance on std::distribution implementations).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double next_double() { return (engine_() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform in [0, n)
    std::size_t next_index(std::size_t n) {
        // rejection-free modulo is fine here; n is tiny relative to 2^64
        return static_cast<std::size_t>(engine_() % n);
    }

private:
    std::mt19937_64 engine_;
};

// Draws k distinct indices from [0, n) in selection order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    if (k > n) k = n;
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + rng.next_index(n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

inline void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.next_index(i)]);
}

} // namespace mclner
