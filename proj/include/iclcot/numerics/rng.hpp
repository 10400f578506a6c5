#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "iclcot/numerics/matrix.hpp"

namespace iclcot {

// Named top-level streams. Everything random in a run derives from
// (seed, one of these) so no two stages ever share draws.
enum class Stream : std::uint64_t {
  kInit = 1,
  kTrain = 2,
  kPool = 3,
  kEval = 4,
  kPolicy = 5,
  kInference = 6,
  kText = 7,
  kClient = 8,
};

// Counter-based generator: the n-th output is a pure function of
// (seed, stream, n), so sequences are identical on every platform and
// streams can be split without coordination.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  Rng(std::uint64_t seed, Stream stream) : Rng(seed, static_cast<std::uint64_t>(stream)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via Box-Muller; the sine branch is cached for the next call.
  double normal();
  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);

  // Child generator on a stream derived from this one's stream id and `sub`.
  // Does not advance this generator.
  Rng split(std::uint64_t sub) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_;
};

std::uint64_t mix64(std::uint64_t x);

template <typename T>
Matrix<T> gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols);

}  // namespace iclcot
