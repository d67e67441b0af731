#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace nefes {

// splitmix64-based generator. Chosen over <random> engines so that stream
// values and state serialization are identical on every platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call (the pair's second half is discarded to
    // keep the stream position independent of call parity).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    // Derive an independent stream (e.g. per-purpose RNGs from a master seed).
    Rng fork(std::uint64_t salt) {
        Rng r(state_ ^ (0xA5A5A5A55A5A5A5Aull + salt * 0xD6E8FEB86659FD93ull));
        r.next_u64();
        return r;
    }

  private:
    std::uint64_t state_;
};

}  // namespace nefes
