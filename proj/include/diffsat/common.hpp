#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#if defined(__x86_64__) || defined(__i386__)
#include <pmmintrin.h>
#endif
#if defined(__GLIBC__)
#include <climits>
#include <malloc.h>
#endif

namespace diffsat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Gradients shrink geometrically through the recurrent iterations, so once a
// model is nearly converged a sizable fraction of forward and backward values
// lands in the subnormal float range, where every hardware multiply takes a
// microcode assist (roughly 100x the normal cost) and step time balloons.
// Flushing denormals to zero trades values below ~1.2e-38 for hard zeros —
// far beneath every tolerance used in this library — and keeps step time
// flat. The flag is per-thread; computational entry points call this
// idempotently.
inline void enable_flush_to_zero() {
#if defined(__x86_64__) || defined(__i386__)
    _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
    _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

// Every training or sampling step allocates and frees on the order of a
// hundred megabytes of tensor buffers. With default glibc settings those
// blocks round-trip through mmap/munmap (tens of thousands of page faults
// per step) and the heap is repeatedly trimmed, so step time creeps upward
// as the run ages. Keeping large blocks on the heap and never trimming lets
// the allocator recycle the same pages for the whole run. One-time, process
// wide; a no-op off glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, INT_MAX);
        return true;
    }();
    (void)once;
#endif
}

class ParseError : public Error {
public:
    ParseError(const std::string& msg, int line)
        : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// SplitMix64 finalizer; used for seeding and stream derivation.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// xoshiro256++ with helper draws. The standard <random> distributions are
// avoided on purpose: their output is implementation-defined, and generated
// datasets must be reproducible byte-for-byte from a seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x = mix64(x + 0x9E3779B97F4A7C15ull);
            w = x;
        }
        s_[0] |= 1;  // never all-zero
    }

    // Independent stream for one instance of a dataset.
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        return Rng(mix64(mix64(seed) ^ (index + 0x9E3779B97F4A7C15ull)));
    }

    std::uint64_t next() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, n). Multiply-shift; bias is < n / 2^64.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform01() < p; }

private:
    std::uint64_t s_[4];
};

}  // namespace diffsat
