#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace kalmanuq {

// SplitMix64 finalizer. Used to derive statistically independent seeds from a
// master seed and a stream index without sharing generator state.
std::uint64_t splitmix64(std::uint64_t x);

// Derives the seed for stream (a, b) under the given master seed. Distinct
// (a, b) pairs give unrelated streams; the same pair is always reproducible.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b = 0);

// Deterministic random stream. One instance per trajectory or per training
// run; never shared across threads.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  // U(0,1), endpoints excluded.
  double uniform();

  // U(lo, hi).
  double uniform_in(double lo, double hi);

  // N(0,1).
  double gaussian();

  // n independent N(0,1) entries.
  Eigen::VectorXd gaussian_vector(Eigen::Index n);

  // Uniform integer in [0, bound).
  std::uint64_t next_index(std::uint64_t bound);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kalmanuq
