#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nst {

/// Error type thrown by every loading / validation / training failure in the core.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

/// 64-bit FNV-1a, used for vocabulary fingerprints in checkpoint manifests.
uint64_t fnv1a64(std::string_view s, uint64_t state = 0xcbf29ce484222325ull);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
bool file_exists(const std::string& path);

std::string lowercase_ascii(std::string s);

namespace rng {

uint64_t splitmix64(uint64_t& state);

/// Derives an independent stream seed from (seed, tag, a, b). Streams for
/// noise, shuffling and dropout are all derived this way so that results do
/// not depend on batch composition or evaluation order.
uint64_t derive(uint64_t seed, std::string_view tag, uint64_t a = 0, uint64_t b = 0);

/// Deterministic random engine. Uniform/normal/index are implemented directly
/// on top of the raw 64-bit stream so that draws are identical across
/// standard-library implementations.
class Engine {
 public:
  explicit Engine(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Standard normal, Box-Muller.
  double normal();

  /// Uniform integer in [0, n). n must be > 0.
  size_t index(size_t n);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace rng

}  // namespace nst
