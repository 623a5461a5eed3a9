#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "steerpid/artifact_io.hpp"
#include "steerpid/error.hpp"
#include "steerpid/vector_ops.hpp"

namespace steerpid {

/// Redundant is the positive class: the classifier outputs P(Redundant | chunk).
enum class RedundancyLabel { Required = 0, Redundant = 1 };

inline const char* to_string(RedundancyLabel l) { return l == RedundancyLabel::Redundant ? "redundant" : "required"; }

struct LabeledChunk {
  ChunkFeatures features;
  RedundancyLabel label = RedundancyLabel::Required;
};

/// Linear logistic model over pooled chunk features. When `standardize` is
/// set, inputs are z-scored with the stored training-set `mean`/`scale`
/// before the dot product.
struct ClassifierModel {
  std::vector<double> weights;
  double bias = 0.0;
  int feature_layer = 20;
  int chunk_size = 24;
  bool standardize = false;
  std::vector<double> mean;
  std::vector<double> scale;

  std::size_t dim() const noexcept { return weights.size(); }
  bool operator==(const ClassifierModel&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 50;
  double l2_penalty = 1e-4;
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool standardize = false;
  int feature_layer = 20;
  int chunk_size = 24;
};

inline void validate(const TrainConfig& cfg) {
  detail::require(std::isfinite(cfg.learning_rate) && cfg.learning_rate > 0.0,
                  "TrainConfig: learning_rate must be > 0");
  detail::require(cfg.epochs >= 1, "TrainConfig: epochs must be >= 1");
  detail::require(std::isfinite(cfg.l2_penalty) && cfg.l2_penalty >= 0.0, "TrainConfig: l2_penalty must be >= 0");
  detail::require(cfg.chunk_size >= 1, "TrainConfig: chunk_size must be >= 1");
}

/// Componentwise mean of the per-token hidden states of one chunk.
inline ChunkFeatures pool_chunk(std::span<const HiddenVector> hidden_states) {
  detail::require(!hidden_states.empty(), "pool_chunk: empty chunk");
  const std::size_t d = hidden_states.front().size();
  ChunkFeatures out(d, 0.0);
  for (const auto& h : hidden_states) {
    detail::require_same_dim(h.size(), d, "pool_chunk");
    for (std::size_t i = 0; i < d; ++i) out[i] += h[i];
  }
  const double n = static_cast<double>(hidden_states.size());
  for (double& v : out) v /= n;
  return out;
}

namespace detail {

/// Logistic function clamped into the open interval (0, 1).
inline double sigmoid(double z) {
  const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

/// Logistic loss of decision value `z` for a label y in {0, 1}, overflow-free.
inline double logistic_loss(double z, double y) {
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

inline double decision_value(const ClassifierModel& m, std::span<const double> x) {
  double z = m.bias;
  if (m.standardize) {
    for (std::size_t i = 0; i < x.size(); ++i) z += m.weights[i] * ((x[i] - m.mean[i]) / m.scale[i]);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) z += m.weights[i] * x[i];
  }
  return z;
}

inline double label_value(RedundancyLabel l) { return l == RedundancyLabel::Redundant ? 1.0 : 0.0; }

}  // namespace detail

inline double predict_proba(const ClassifierModel& model, std::span<const double> x) {
  detail::require_same_dim(x.size(), model.dim(), "predict_proba");
  return detail::sigmoid(detail::decision_value(model, x));
}

/// L2-regularized mean logistic loss of `model` over `data`.
inline double training_loss(const ClassifierModel& model, std::span<const LabeledChunk> data, double l2_penalty) {
  double loss = 0.0;
  for (const auto& ex : data) {
    detail::require_same_dim(ex.features.size(), model.dim(), "training_loss");
    loss += detail::logistic_loss(detail::decision_value(model, ex.features), detail::label_value(ex.label));
  }
  loss /= static_cast<double>(data.size());
  return loss + 0.5 * l2_penalty * dot(model.weights, model.weights);
}

struct TrainResult {
  ClassifierModel model;
  std::vector<double> epoch_loss;  // regularized training loss after each epoch
};

/// Per-example SGD on the L2-regularized logistic loss, starting from zero
/// weights. The visiting order is reshuffled every epoch from `cfg.seed`, so
/// the result is fully determined by (data, cfg).
inline TrainResult train_with_history(std::span<const LabeledChunk> data, const TrainConfig& cfg) {
  validate(cfg);
  detail::require(data.size() >= 2, "train: need at least 2 examples");
  const std::size_t d = data.front().features.size();
  detail::require(d >= 1, "train: empty feature vectors");
  bool has_pos = false, has_neg = false;
  for (const auto& ex : data) {
    detail::require_same_dim(ex.features.size(), d, "train");
    detail::require(detail::all_finite(ex.features), "train: non-finite feature value");
    (ex.label == RedundancyLabel::Redundant ? has_pos : has_neg) = true;
  }
  detail::require(has_pos && has_neg, "train: both Required and Redundant examples are needed");

  TrainResult result;
  ClassifierModel& m = result.model;
  m.weights.assign(d, 0.0);
  m.feature_layer = cfg.feature_layer;
  m.chunk_size = cfg.chunk_size;
  m.standardize = cfg.standardize;
  if (cfg.standardize) {
    const double n = static_cast<double>(data.size());
    m.mean.assign(d, 0.0);
    m.scale.assign(d, 0.0);
    for (const auto& ex : data)
      for (std::size_t i = 0; i < d; ++i) m.mean[i] += ex.features[i];
    for (double& v : m.mean) v /= n;
    for (const auto& ex : data)
      for (std::size_t i = 0; i < d; ++i) m.scale[i] += (ex.features[i] - m.mean[i]) * (ex.features[i] - m.mean[i]);
    for (double& v : m.scale) v = v > 0.0 ? std::sqrt(v / n) : 1.0;
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> x(d);
  const double lr = cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const auto& ex = data[idx];
      for (std::size_t i = 0; i < d; ++i)
        x[i] = m.standardize ? (ex.features[i] - m.mean[i]) / m.scale[i] : ex.features[i];
      double z = m.bias;
      for (std::size_t i = 0; i < d; ++i) z += m.weights[i] * x[i];
      const double g = detail::sigmoid(z) - detail::label_value(ex.label);
      for (std::size_t i = 0; i < d; ++i) m.weights[i] -= lr * (g * x[i] + cfg.l2_penalty * m.weights[i]);
      m.bias -= lr * g;
    }
    result.epoch_loss.push_back(training_loss(m, data, cfg.l2_penalty));
  }
  detail::ensure(detail::all_finite(m.weights) && std::isfinite(m.bias), "train: diverged to non-finite weights");
  return result;
}

inline ClassifierModel train(std::span<const LabeledChunk> data, const TrainConfig& cfg) {
  return train_with_history(data, cfg).model;
}

/// Fraction of examples whose thresholded prediction (p >= 0.5 means
/// Redundant) matches the label.
inline double accuracy(const ClassifierModel& model, std::span<const LabeledChunk> data) {
  detail::require(!data.empty(), "accuracy: empty data set");
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const bool redundant = predict_proba(model, ex.features) >= 0.5;
    correct += redundant == (ex.label == RedundancyLabel::Redundant);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// --- persistence -----------------------------------------------------------

inline constexpr std::string_view kClassifierMagic = "steerpid-classifier";
inline constexpr int kClassifierFormatVersion = 1;

inline std::string serialize(const ClassifierModel& m) {
  std::ostringstream out;
  out << kClassifierMagic << ' ' << kClassifierFormatVersion << '\n'
      << "dim " << m.dim() << '\n'
      << "chunk_size " << m.chunk_size << '\n'
      << "feature_layer " << m.feature_layer << '\n'
      << "standardize " << (m.standardize ? 1 : 0) << '\n'
      << "bias " << io::hexfloat(m.bias) << '\n'
      << "weights\n";
  io::write_reals(out, m.weights);
  if (m.standardize) {
    out << "mean\n";
    io::write_reals(out, m.mean);
    out << "scale\n";
    io::write_reals(out, m.scale);
  }
  out << "end\n";
  return out.str();
}

inline ClassifierModel parse_classifier(std::string text) {
  io::LineReader r(std::move(text));
  r.expect_line(std::string(kClassifierMagic) + " " + std::to_string(kClassifierFormatVersion));
  ClassifierModel m;
  std::size_t ln = r.line_number();
  const long long dim = r.int_field("dim");
  if (dim < 1 || dim > (1LL << 24)) throw ParseError("dim out of range", ln);
  ln = r.line_number();
  const long long chunk = r.int_field("chunk_size");
  if (chunk < 1 || chunk > (1LL << 30)) throw ParseError("chunk_size must be >= 1", ln);
  m.chunk_size = static_cast<int>(chunk);
  m.feature_layer = static_cast<int>(r.int_field("feature_layer"));
  ln = r.line_number();
  const long long standardize = r.int_field("standardize");
  if (standardize != 0 && standardize != 1) throw ParseError("standardize must be 0 or 1", ln);
  m.standardize = standardize == 1;
  m.bias = r.real_field("bias");
  r.expect_line("weights");
  m.weights = r.reals(static_cast<std::size_t>(dim), "weights");
  if (m.standardize) {
    r.expect_line("mean");
    m.mean = r.reals(static_cast<std::size_t>(dim), "mean");
    r.expect_line("scale");
    ln = r.line_number();
    m.scale = r.reals(static_cast<std::size_t>(dim), "scale");
    for (double s : m.scale)
      if (!(s > 0.0)) throw ParseError("scale entries must be positive", ln);
  }
  r.expect_end();
  return m;
}

inline void save_model(const ClassifierModel& model, const std::string& path) { io::write_file(path, serialize(model)); }

inline ClassifierModel load_model(const std::string& path) {
  try {
    return parse_classifier(io::read_file(path));
  } catch (const ParseError& e) {
    throw e.with_context(path);
  }
}

}  // namespace steerpid
