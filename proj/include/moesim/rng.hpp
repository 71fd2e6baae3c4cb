#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace moesim {

// SplitMix64 step. Bit-stable on every platform, which is what the
// determinism guarantees rest on; std::mt19937_64 would do as well for the
// engine but its distributions are implementation-defined, so all draws
// below are mapped explicitly.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used only to turn stream labels into seed material.
inline uint64_t hash_label(std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Every random stream in the project is derived from the single config seed
// via a label (and an optional counter, e.g. step*layers+layer), so modules
// never share or race on generator state.
inline uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t extra = 0) {
  uint64_t s = root;
  splitmix64(s);
  s ^= hash_label(label);
  splitmix64(s);
  // run the counter through the mixer too: raw small integers xored into the
  // state collide across streams whose states differ only in the low bits
  uint64_t e = extra;
  s ^= splitmix64(e);
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Unbiased draw in [0, n) by rejection.
  uint64_t next_below(uint64_t n) {
    if (n == 0) return 0;
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Exponential with the given rate; next_double() < 1 keeps log1p finite.
  double next_exp(double rate) { return -std::log1p(-next_double()) / rate; }

 private:
  uint64_t state_;
};

}  // namespace moesim
