#pragma once

#include <cmath>
#include <cstdint>

namespace surge {

// Counter-free deterministic generator (splitmix64 core). All randomness in
// the library flows through this so results are reproducible across runs and
// platforms; std::random distributions are avoided on purpose since their
// output is implementation-defined.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        return n <= 1 ? 0 : static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    // Box-Muller; one value per call (the pair's twin is discarded to keep
    // the stream position independent of call parity).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Derives an independent substream. Used as rng.substream(epoch, image)
    // so batch determinism does not depend on iteration or thread order.
    Rng substream(uint64_t a, uint64_t b = 0x5bd1e995ULL) const {
        uint64_t mixed = state_;
        mixed ^= mix(a + 0x1000193ULL);
        mixed ^= mix(b + 0x811c9dc5ULL) * 0x100000001b3ULL;
        return Rng(mixed);
    }

  private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdULL;
        z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ULL;
        return z ^ (z >> 33);
    }

    uint64_t state_;
};

template <typename T, typename TensorT>
void fill_normal(TensorT& t, Rng& rng, double stddev) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
}

}  // namespace surge
