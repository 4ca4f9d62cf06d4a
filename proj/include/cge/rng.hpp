#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cge {

// Deterministic counter-free PRNG. splitmix64 core, so streams are cheap to
// derive by name and the same seed reproduces bit-identical draws on every
// platform (std::normal_distribution does not guarantee that).
class Rng {
  public:
    Rng() = default;
    explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    static uint64_t hash_name(std::string_view name) {
        uint64_t h = 0xcbf29ce484222325ull; // FNV-1a 64
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    // Child stream named (parent, name). Does not advance the parent.
    Rng derive(std::string_view name) const {
        Rng child;
        child.state_ = mix(state_ ^ hash_name(name));
        return child;
    }
    Rng derive(std::string_view name, uint64_t index) const {
        Rng child;
        child.state_ = mix(mix(state_ ^ hash_name(name)) + index);
        return child;
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n).
    uint64_t next_below(uint64_t n) {
        const uint64_t threshold = (0ull - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    // Standard normal via Box-Muller with cached spare.
    double next_gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) {
            u1 = next_double();
        }
        const double u2 = next_double();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        has_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_ = 0x853c49e6748fea9bull;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace cge
