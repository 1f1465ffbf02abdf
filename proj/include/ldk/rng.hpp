#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "ldk/tensor.hpp"

namespace ldk {

// Counter-based RNG: Philox4x32-10. Every draw is a pure function of
// (seed, stream, counter), so independent streams keyed by (seed, stream-id)
// give results that do not depend on scheduling or call interleaving.
namespace detail {

struct PhiloxBlock {
    std::array<uint32_t, 4> ctr;
    std::array<uint32_t, 2> key;

    static inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
        uint64_t p = static_cast<uint64_t>(a) * b;
        hi = static_cast<uint32_t>(p >> 32);
        lo = static_cast<uint32_t>(p);
    }

    std::array<uint32_t, 4> operator()() const {
        auto c = ctr;
        auto k = key;
        for (int round = 0; round < 10; ++round) {
            uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, c[0], hi0, lo0);
            mulhilo(0xCD9E8D57u, c[2], hi1, lo1);
            c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
            k[0] += 0x9E3779B9u;
            k[1] += 0xBB67AE85u;
        }
        return c;
    }
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

class Rng {
public:
    Rng() : Rng(0, 0) {}
    Rng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}
    Rng(uint64_t seed, std::string_view stream_name) : Rng(seed, detail::fnv1a64(stream_name)) {}

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    // Derived independent stream; `k` distinguishes siblings (e.g. batch lanes).
    Rng child(uint64_t k) const {
        uint64_t s = stream_;
        s ^= k + 0x9E3779B97F4A7C15ull + (s << 6) + (s >> 2);
        return Rng(seed_, s);
    }
    Rng child(std::string_view name) const { return child(detail::fnv1a64(name)); }

    uint32_t next_u32() {
        if (have_ == 0) refill();
        return buf_[--have_];
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n)
    uint64_t below(uint64_t n) { return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n; }

    // Standard normal via Box-Muller (pinned across platforms, unlike
    // std::normal_distribution).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    template <class T>
    Tensor<T> normal_tensor(Shape shape) {
        Tensor<T> out(std::move(shape));
        for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(normal());
        return out;
    }

    template <class T>
    Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
        Tensor<T> out(std::move(shape));
        for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(uniform(lo, hi));
        return out;
    }

private:
    void refill() {
        detail::PhiloxBlock blk;
        blk.key = {static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32)};
        blk.ctr = {static_cast<uint32_t>(counter_), static_cast<uint32_t>(counter_ >> 32),
                   static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)};
        buf_ = blk();
        ++counter_;
        have_ = 4;
    }

    uint64_t seed_ = 0;
    uint64_t stream_ = 0;
    uint64_t counter_ = 0;
    std::array<uint32_t, 4> buf_{};
    int have_ = 0;
    double spare_ = 0;
    bool have_spare_ = false;
};

}  // namespace ldk
