#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace vicon {

/// Deterministic random source. mt19937_64 is fully specified by the standard;
/// the distributions are hand-rolled here because std:: distributions are
/// implementation-defined and would break bit-reproducibility across stdlibs.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [lo, hi] inclusive, rejection-sampled.
    int64_t randint(int64_t lo, int64_t hi) {
        if (lo > hi) throw std::invalid_argument("randint: empty range");
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return lo + static_cast<int64_t>(x % span);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(randint(0, i))]);
        }
    }

    /// Independent child stream; used to seed parallel workers.
    Rng fork(uint64_t salt) { return Rng(gen_() ^ (salt * 0x9e3779b97f4a7c15ull)); }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vicon
