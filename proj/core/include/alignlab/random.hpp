#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace alignlab {

/// Deterministic RNG. All transforms are hand-rolled on top of the mt19937_64
/// bit stream so results are identical across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without a cached spare, so draw order is obvious.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal clipped by rejection to +-2 stddev.
    double truncated_normal(double stddev) {
        for (;;) {
            const double z = normal();
            if (std::abs(z) <= 2.0) return z * stddev;
        }
    }

    // Inclusive range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(gen_() % span);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(gen_() % i);
            std::swap(items[i - 1], items[j]);
        }
    }

    std::vector<double> normal_vector(std::size_t n, double stddev) {
        std::vector<double> out(n);
        for (auto& v : out) v = normal(0.0, stddev);
        return out;
    }

  private:
    std::mt19937_64 gen_;
};

// splitmix64; used to derive independent per-step seeds from (seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace alignlab
