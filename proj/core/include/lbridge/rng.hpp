#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace lbridge {

// xoshiro256++ generator. Self-contained so that draws are bit-identical
// across platforms and the full state fits in four words, which makes
// checkpointed training resumable without relying on libstdc++ stream
// formats.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) { reseed(seed); }

    void reseed(uint64_t seed) {
        // splitmix64 expansion of the seed into the state vector
        uint64_t x = seed;
        for (auto & s : state_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [-0.5, 0.5)
    double uniform_sym() { return uniform() - 0.5; }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two words per draw so the stream position is
    // independent of how results are paired up.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // derive an independent stream, e.g. one per training component
    Rng split(uint64_t stream) const {
        Rng r(state_[0] ^ (stream * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
        r.state_[1] ^= state_[1];
        r.state_[2] ^= state_[2] + stream;
        r.state_[3] ^= state_[3];
        return r;
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4> & s) { state_ = s; }

    std::string state_hex() const;
    static Rng from_state_hex(const std::string & hex);

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<uint64_t, 4> state_{};
};

} // namespace lbridge
