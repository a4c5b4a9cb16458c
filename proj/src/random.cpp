#include "kalmanuq/random.hpp"

namespace kalmanuq {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b) {
  std::uint64_t s = splitmix64(master ^ 0xA5A5A5A5A5A5A5A5ULL);
  s = splitmix64(s ^ a);
  return splitmix64(s ^ (b + 0x165667B19E3779F9ULL));
}

double RandomStream::uniform() {
  // (0,1): draw 53-bit mantissa, shift off zero.
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double RandomStream::uniform_in(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RandomStream::gaussian() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

Eigen::VectorXd RandomStream::gaussian_vector(Eigen::Index n) {
  Eigen::VectorXd v(n);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(engine_);
  return v;
}

std::uint64_t RandomStream::next_index(std::uint64_t bound) {
  std::uniform_int_distribution<std::uint64_t> dist(0, bound - 1);
  return dist(engine_);
}

}  // namespace kalmanuq
