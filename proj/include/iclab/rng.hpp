#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace iclab {

/// Mixes a 64-bit value (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent child seed from a root seed and a stream name.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

/// Derives an independent child seed from a root seed and an index.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

/// A named random stream. Sampling is implemented on raw engine bits so the
/// sequence is identical across standard-library implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(mix64(seed)) {}
  RandomStream(std::uint64_t root, std::string_view name)
      : RandomStream(derive_seed(root, name)) {}

  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  int uniform_int(int n);
  /// Standard normal via Box-Muller.
  double normal();
  /// Index drawn from unnormalized nonnegative weights.
  int categorical(std::span<const double> weights);

  /// Child stream, independent of this one and of siblings with other names.
  RandomStream split(std::string_view name) {
    return RandomStream(derive_seed(engine_(), name));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace iclab
