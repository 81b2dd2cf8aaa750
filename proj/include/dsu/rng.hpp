#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dsu {

// Counter-based pseudo-random stream: the i-th output is mix64(key + i*PHI),
// so a stream is fully determined by (seed, label path). split() derives a
// stream with an unrelated key, which lets every consumer (per DSU insertion
// position, per data domain, ...) own an independent sequence that does not
// shift when other consumers draw more or fewer values.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, std::string_view label = "root")
      : key_(derive(mix64(seed ^ 0x9e3779b97f4a7c15ull), label)) {}

  RngStream split(std::string_view label) const {
    RngStream s(*this);
    s.key_ = derive(key_, label);
    s.counter_ = 0;
    return s;
  }

  RngStream split(uint64_t index) const {
    RngStream s(*this);
    s.key_ = mix64(key_ ^ mix64(index + 0x6a09e667f3bcc909ull));
    s.counter_ = 0;
    return s;
  }

  uint64_t next_u64() { return mix64(key_ + (++counter_) * kPhi); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi].
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    // Multiply-shift map of a 64-bit draw onto the range.
    unsigned __int128 wide =
        static_cast<unsigned __int128>(next_u64()) * range;
    return lo + static_cast<int64_t>(wide >> 64);
  }

 private:
  static constexpr uint64_t kPhi = 0x9e3779b97f4a7c15ull;
  static constexpr double kPi = 3.14159265358979323846;

  // SplitMix64 finalizer; bijective on 64-bit words.
  static uint64_t mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  static uint64_t derive(uint64_t key, std::string_view label) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the label
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return mix64(key ^ mix64(h));
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace dsu
