#pragma once

// Gaussian two-cluster generators with known means, for classifier and
// control-vector tests.

#include <cstdint>
#include <random>
#include <vector>

#include "steerpid/features_classifier.hpp"

namespace synthetic {

struct Clusters {
  std::vector<double> mu_required;
  std::vector<double> mu_redundant;
  double sigma = 1.0;
};

/// Required mean +m on every axis, redundant mean -m.
inline Clusters symmetric(std::size_t dim, double m, double sigma = 1.0) {
  return {std::vector<double>(dim, m), std::vector<double>(dim, -m), sigma};
}

inline std::vector<double> draw(const std::vector<double>& mu, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<double> x(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) x[i] = mu[i] + n(rng);
  return x;
}

/// `n` examples with alternating labels (Redundant first).
inline std::vector<steerpid::LabeledChunk> labeled(const Clusters& c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<steerpid::LabeledChunk> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool red = i % 2 == 0;
    out.push_back({draw(red ? c.mu_redundant : c.mu_required, c.sigma, rng),
                   red ? steerpid::RedundancyLabel::Redundant : steerpid::RedundancyLabel::Required});
  }
  return out;
}

inline std::vector<std::vector<double>> samples(const std::vector<double>& mu, double sigma, std::size_t n,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(mu, sigma, rng));
  return out;
}

}  // namespace synthetic
