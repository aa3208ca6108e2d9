#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <Eigen/Dense>

namespace bamd {

using Rng = std::mt19937_64;

// Independent, reproducible stream for (seed, stream) pairs. Chains and
// simulator stages each take their own stream index.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline Eigen::VectorXd standard_normal_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = dist(rng);
  return z;
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

// Draw from the inverted gamma with density proportional to
// x^{-(shape+1)} exp(-scale / x).
inline double inverse_gamma(Rng& rng, double shape, double scale) {
  std::gamma_distribution<double> dist(shape, 1.0);
  return scale / dist(rng);
}

// Index drawn from normalized probabilities.
inline int draw_categorical(Rng& rng, std::span<const double> probs) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace bamd
