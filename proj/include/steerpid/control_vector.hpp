#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "steerpid/artifact_io.hpp"
#include "steerpid/error.hpp"
#include "steerpid/vector_ops.hpp"

namespace steerpid {

/// Steering direction: mean(required) - mean(redundant) over chunk-level
/// pooled features, plus the sample counts it was estimated from.
struct ControlVector {
  std::vector<double> direction;
  std::size_t n_required = 0;
  std::size_t n_redundant = 0;
  int feature_layer = 20;
  bool normalized = false;

  std::size_t dim() const noexcept { return direction.size(); }
  bool operator==(const ControlVector&) const = default;
};

namespace detail {

inline std::vector<double> mean_of(std::span<const ChunkFeatures> set, std::size_t d, const char* what) {
  std::vector<double> m(d, 0.0);
  for (const auto& x : set) {
    require_same_dim(x.size(), d, what);
    require(all_finite(x), std::string(what) + ": non-finite feature value");
    for (std::size_t i = 0; i < d; ++i) m[i] += x[i];
  }
  for (double& v : m) v /= static_cast<double>(set.size());
  return m;
}

}  // namespace detail

/// Raw difference of set means. With `normalize`, the direction is rescaled
/// to unit length (a zero difference is left as is).
inline ControlVector extract(std::span<const ChunkFeatures> required, std::span<const ChunkFeatures> redundant,
                             int feature_layer = 20, bool normalize = false) {
  detail::require(!required.empty(), "extract: empty required set");
  detail::require(!redundant.empty(), "extract: empty redundant set");
  const std::size_t d = required.front().size();
  detail::require(d >= 1, "extract: zero-dimensional features");
  const auto mr = detail::mean_of(required, d, "extract");
  const auto mx = detail::mean_of(redundant, d, "extract");

  ControlVector v;
  v.direction.resize(d);
  for (std::size_t i = 0; i < d; ++i) v.direction[i] = mr[i] - mx[i];
  v.n_required = required.size();
  v.n_redundant = redundant.size();
  v.feature_layer = feature_layer;
  if (normalize) {
    const double n = norm(v.direction);
    if (n > 0.0)
      for (double& c : v.direction) c /= n;
    v.normalized = true;
  }
  return v;
}

/// h + alpha * v, componentwise.
inline HiddenVector apply_steering(std::span<const double> h, double alpha, const ControlVector& v) {
  detail::require_same_dim(h.size(), v.dim(), "apply_steering");
  detail::require(alpha >= 0.0, "apply_steering: alpha must be >= 0");
  HiddenVector out(h.begin(), h.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * v.direction[i];
  return out;
}

// --- persistence -----------------------------------------------------------

inline constexpr std::string_view kControlVectorMagic = "steerpid-control-vector";
inline constexpr int kControlVectorFormatVersion = 1;

inline std::string serialize(const ControlVector& v) {
  std::ostringstream out;
  out << kControlVectorMagic << ' ' << kControlVectorFormatVersion << '\n'
      << "dim " << v.dim() << '\n'
      << "feature_layer " << v.feature_layer << '\n'
      << "n_required " << v.n_required << '\n'
      << "n_redundant " << v.n_redundant << '\n'
      << "normalized " << (v.normalized ? 1 : 0) << '\n'
      << "direction\n";
  io::write_reals(out, v.direction);
  out << "end\n";
  return out.str();
}

inline ControlVector parse_control_vector(std::string text) {
  io::LineReader r(std::move(text));
  r.expect_line(std::string(kControlVectorMagic) + " " + std::to_string(kControlVectorFormatVersion));
  ControlVector v;
  std::size_t ln = r.line_number();
  const long long dim = r.int_field("dim");
  if (dim < 1 || dim > (1LL << 24)) throw ParseError("dim out of range", ln);
  v.feature_layer = static_cast<int>(r.int_field("feature_layer"));
  ln = r.line_number();
  const long long n_req = r.int_field("n_required");
  if (n_req < 1) throw ParseError("n_required must be >= 1", ln);
  ln = r.line_number();
  const long long n_red = r.int_field("n_redundant");
  if (n_red < 1) throw ParseError("n_redundant must be >= 1", ln);
  v.n_required = static_cast<std::size_t>(n_req);
  v.n_redundant = static_cast<std::size_t>(n_red);
  ln = r.line_number();
  const long long normalized = r.int_field("normalized");
  if (normalized != 0 && normalized != 1) throw ParseError("normalized must be 0 or 1", ln);
  v.normalized = normalized == 1;
  r.expect_line("direction");
  v.direction = r.reals(static_cast<std::size_t>(dim), "direction");
  r.expect_end();
  return v;
}

inline void save_vector(const ControlVector& v, const std::string& path) { io::write_file(path, serialize(v)); }

inline ControlVector load_vector(const std::string& path) {
  try {
    return parse_control_vector(io::read_file(path));
  } catch (const ParseError& e) {
    throw e.with_context(path);
  }
}

}  // namespace steerpid
