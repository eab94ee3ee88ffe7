#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sdclr {

/// Seeded generator with platform-stable draws.
///
/// Wraps std::mt19937_64 (whose output sequence is fixed by the standard) and
/// derives every variate from raw 64-bit outputs, so streams are reproducible
/// independent of the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    std::string state() const;
    void set_state(const std::string& state);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derive an independent seed for a named purpose from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace sdclr
