#include "iclcot/numerics/rng.hpp"

#include <cmath>
#include <numbers>

namespace iclcot {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(mix64(mix64(seed + kGolden) ^ mix64(~stream))) {}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (spare_) {
    const double z = *spare_;
    spare_.reset();
    return z;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ContractError("uniform_index: empty range");
  // Rejection sampling avoids modulo bias.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % bound;
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v < limit) return static_cast<std::size_t>(v % bound);
  }
}

Rng Rng::split(std::uint64_t sub) const {
  return Rng(seed_, mix64(stream_ * kGolden + mix64(sub + 0x632BE59BD9B4E019ULL)));
}

template <typename T>
Matrix<T> gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ContractError("gaussian_sample: rows and cols must be >= 1");
  Matrix<T> m(rows, cols);
  for (T& v : m.data()) v = static_cast<T>(rng.normal());
  return m;
}

template Matrix<float> gaussian_sample<float>(Rng&, std::size_t, std::size_t);
template Matrix<double> gaussian_sample<double>(Rng&, std::size_t, std::size_t);

}  // namespace iclcot
