// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_COMMON_HPP
#define TREX_COMMON_HPP

#include <bit>
#include <cstdint>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace trex {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

/// Numeric width for the whole run. f32 rounds every kernel result through
/// float precision; f64 keeps full double precision for verification runs
/// (gradient checks, analysis metrics).
enum class NumericMode { f32, f64 };

void set_numeric_mode(NumericMode mode);
NumericMode numeric_mode();

inline double quantize(double v) {
  return numeric_mode() == NumericMode::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

/// Deterministic counter-free random stream. The engine is mt19937_64 (fully
/// specified by the standard); uniform/normal mappings are implemented here so
/// sequences are identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

  std::uint64_t next_u64() {
    // xorshift* on a splitmix-initialized state; small, fast, well mixed.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (cosine branch only, one draw per call).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Mixes a base seed with up to three stream coordinates. Used for the
  /// per-sample augmentation contract hash(run_seed, epoch, sample, crop).
  static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    std::uint64_t h = splitmix(base);
    h = splitmix(h ^ (a + 0x9E3779B97F4A7C15ULL));
    h = splitmix(h ^ (b + 0x7F4A7C159E3779B9ULL));
    h = splitmix(h ^ (c + 0x2545F4914F6CDD1DULL));
    return h;
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
};

/// Runs fn(i) for i in [0, n). Work is split across worker threads; each index
/// must write only its own output slots so the result is identical to the
/// sequential order. Thread count is capped by the TREX_THREADS env var.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

std::size_t worker_thread_count();

/// FNV-1a, used for config hashes.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace trex

#endif  // TREX_COMMON_HPP
