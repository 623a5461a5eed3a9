#pragma once

// Desk-scale stand-in for a reasoning LLM. Each step emits one chunk of
// hidden states drawn from either the "required" or the "redundant" Gaussian
// cluster. The log-odds of emitting a redundant chunk fall in proportion to
// the steering applied along the true separating direction, and the episode
// ends once enough required chunks have accumulated (or the token budget
// runs out).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "steerpid/control_vector.hpp"
#include "steerpid/error.hpp"
#include "steerpid/features_classifier.hpp"
#include "steerpid/seeding.hpp"
#include "steerpid/vector_ops.hpp"

namespace steerpid {

struct PlantConfig {
  int dim = 64;
  int chunk_size = 24;
  std::vector<double> mu_required;   // empty: +0.5 on the first 8 axes
  std::vector<double> mu_redundant;  // empty: -0.5 on the first 8 axes
  double noise_sigma = 1.0;
  double base_redundancy_logit = 0.4;
  double steering_coupling = 3.0;
  int required_chunks_to_solve = 20;
  int max_tokens = 2048;
  double distraction_penalty = 0.004;
  std::uint64_t seed = 0;

  bool operator==(const PlantConfig&) const = default;
};

/// Fills in the default cluster means for a config whose means are empty.
inline std::vector<double> default_cluster_mean(int dim, double value) {
  std::vector<double> mu(static_cast<std::size_t>(std::max(dim, 0)), 0.0);
  for (std::size_t i = 0; i < mu.size() && i < 8; ++i) mu[i] = value;
  return mu;
}

inline PlantConfig resolved(PlantConfig cfg) {
  if (cfg.mu_required.empty()) cfg.mu_required = default_cluster_mean(cfg.dim, 0.5);
  if (cfg.mu_redundant.empty()) cfg.mu_redundant = default_cluster_mean(cfg.dim, -0.5);
  return cfg;
}

inline void validate(const PlantConfig& raw) {
  const PlantConfig cfg = resolved(raw);
  detail::require(cfg.dim >= 1, "PlantConfig: dim must be >= 1");
  detail::require(cfg.chunk_size >= 1, "PlantConfig: chunk_size must be >= 1");
  detail::require(std::isfinite(cfg.noise_sigma) && cfg.noise_sigma > 0.0, "PlantConfig: noise_sigma must be > 0");
  detail::require(cfg.max_tokens >= cfg.chunk_size, "PlantConfig: max_tokens must be >= chunk_size");
  detail::require(std::isfinite(cfg.base_redundancy_logit), "PlantConfig: base_redundancy_logit must be finite");
  detail::require(std::isfinite(cfg.steering_coupling) && cfg.steering_coupling >= 0.0,
                  "PlantConfig: steering_coupling must be >= 0");
  detail::require(cfg.required_chunks_to_solve >= 1, "PlantConfig: required_chunks_to_solve must be >= 1");
  detail::require(std::isfinite(cfg.distraction_penalty) && cfg.distraction_penalty >= 0.0,
                  "PlantConfig: distraction_penalty must be >= 0");
  const auto d = static_cast<std::size_t>(cfg.dim);
  detail::require(cfg.mu_required.size() == d, "PlantConfig: mu_required must have dim components");
  detail::require(cfg.mu_redundant.size() == d, "PlantConfig: mu_redundant must have dim components");
  detail::require(detail::all_finite(cfg.mu_required) && detail::all_finite(cfg.mu_redundant),
                  "PlantConfig: cluster means must be finite");
  double gap = 0.0;
  for (std::size_t i = 0; i < d; ++i) gap += std::abs(cfg.mu_required[i] - cfg.mu_redundant[i]);
  detail::require(gap > 0.0, "PlantConfig: mu_required and mu_redundant must differ");
}

struct ChunkEmission {
  std::vector<HiddenVector> hidden_states;  // already steered: h + alpha * v
  RedundancyLabel true_label = RedundancyLabel::Required;
  int tokens_emitted = 0;
  bool done = false;
  bool solved = false;  // meaningful only when done
};

class ReasoningPlant {
 public:
  explicit ReasoningPlant(const PlantConfig& cfg) : cfg_(resolved(cfg)) {
    validate(cfg_);
    gap_.resize(cfg_.mu_required.size());
    for (std::size_t i = 0; i < gap_.size(); ++i) gap_[i] = cfg_.mu_required[i] - cfg_.mu_redundant[i];
    gap_sq_ = dot(gap_, gap_);
    // Separate streams for mode choice, token noise and the final solve draw,
    // so chunk k's mode draw is the same uniform in every arm of a paired run.
    mode_rng_.seed(derive_seed(cfg_.seed, 0));
    noise_rng_.seed(derive_seed(cfg_.seed, 1));
    solve_rng_.seed(derive_seed(cfg_.seed, 2));
    logit_ = cfg_.base_redundancy_logit;
  }

  const PlantConfig& config() const noexcept { return cfg_; }
  std::size_t dim() const noexcept { return gap_.size(); }
  bool done() const noexcept { return done_; }
  int tokens() const noexcept { return tokens_; }
  int required_chunks() const noexcept { return required_; }
  int redundant_chunks() const noexcept { return redundant_; }
  double redundancy_logit() const noexcept { return logit_; }
  /// mu_required - mu_redundant: the direction steering is measured against.
  const std::vector<double>& true_gap() const noexcept { return gap_; }

  /// Emits the next chunk under steering strength `alpha` along `v`.
  ChunkEmission step(double alpha, const ControlVector& v) {
    detail::require(!done_, "ReasoningPlant::step: episode already finished");
    detail::require(std::isfinite(alpha) && alpha >= 0.0, "ReasoningPlant::step: alpha must be >= 0");
    detail::require_same_dim(v.dim(), dim(), "ReasoningPlant::step");

    const double effective = alpha * dot(v.direction, gap_) / gap_sq_;
    logit_ -= cfg_.steering_coupling * effective;

    const double p_redundant = detail::sigmoid(logit_);
    const bool redundant = uniform_(mode_rng_) < p_redundant;
    const auto& mu = redundant ? cfg_.mu_redundant : cfg_.mu_required;

    ChunkEmission out;
    out.true_label = redundant ? RedundancyLabel::Redundant : RedundancyLabel::Required;
    out.tokens_emitted = std::min(cfg_.chunk_size, cfg_.max_tokens - tokens_);
    out.hidden_states.reserve(static_cast<std::size_t>(out.tokens_emitted));
    HiddenVector h(dim());
    for (int t = 0; t < out.tokens_emitted; ++t) {
      for (std::size_t i = 0; i < h.size(); ++i) h[i] = mu[i] + cfg_.noise_sigma * normal_(noise_rng_);
      out.hidden_states.push_back(apply_steering(h, alpha, v));
    }

    tokens_ += out.tokens_emitted;
    (redundant ? redundant_ : required_) += 1;

    const bool reached = required_ >= cfg_.required_chunks_to_solve;
    if (reached || tokens_ >= cfg_.max_tokens) {
      done_ = true;
      const double quality = std::max(0.0, 1.0 - cfg_.distraction_penalty * redundant_);
      const bool success_draw = uniform_(solve_rng_) < quality;
      solved_ = reached && success_draw;
    }
    out.done = done_;
    out.solved = solved_;
    return out;
  }

 private:
  PlantConfig cfg_;
  std::vector<double> gap_;
  double gap_sq_ = 0.0;
  std::mt19937_64 mode_rng_;
  std::mt19937_64 noise_rng_;
  std::mt19937_64 solve_rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
  double logit_ = 0.0;
  int tokens_ = 0;
  int required_ = 0;
  int redundant_ = 0;
  bool done_ = false;
  bool solved_ = false;
};

}  // namespace steerpid
