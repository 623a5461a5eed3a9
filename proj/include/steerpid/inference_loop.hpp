#pragma once

// Online phase: the chunk-level control loop.
//
// Tokens are grouped into fixed, non-overlapping chunks aligned to the start
// of generation. After each chunk the pooled features are scored by the
// redundancy classifier; if the chunk's last token index t satisfies
// t >= t_init and t - t_init <= t_window, the PID controller is updated with
// that score. The current alpha steers every chunk (h + alpha * v) for the
// whole episode, so alpha stays frozen at its last in-window value after the
// window closes.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "steerpid/control_vector.hpp"
#include "steerpid/error.hpp"
#include "steerpid/features_classifier.hpp"
#include "steerpid/pid_controller.hpp"
#include "steerpid/reasoning_plant.hpp"
#include "steerpid/seeding.hpp"

namespace steerpid {

struct SteeringSchedule {
  int t_init = 80;
  int t_window = 60;
  int max_tokens = 2048;

  bool operator==(const SteeringSchedule&) const = default;
};

/// `max_tokens == t_init` is accepted: it is the empty-window schedule that
/// never updates the controller.
inline void validate(const SteeringSchedule& s) {
  detail::require(s.t_init >= 0, "SteeringSchedule: t_init must be >= 0");
  detail::require(s.t_window >= 0, "SteeringSchedule: t_window must be >= 0");
  detail::require(s.max_tokens >= 1, "SteeringSchedule: max_tokens must be >= 1");
  detail::require(s.max_tokens >= s.t_init, "SteeringSchedule: max_tokens must be >= t_init");
}

/// True when a chunk whose last token has 0-based index `last_token` falls
/// inside the steering window.
constexpr bool in_window(const SteeringSchedule& s, long long last_token) noexcept {
  return last_token >= s.t_init && last_token - s.t_init <= s.t_window;
}

/// One chunk of a recorded episode. Exactly one of `features` (pooled file)
/// or `hidden_states` (raw per-token states) is populated.
struct TraceRecord {
  std::uint64_t step_index = 0;
  ChunkFeatures features;
  std::vector<HiddenVector> hidden_states;
  std::optional<RedundancyLabel> true_label;
  std::optional<int> token_count;

  bool operator==(const TraceRecord&) const = default;
};

struct EpisodeResult {
  bool solved = false;
  int tokens_used = 0;
  /// Controller output after each chunk; alpha_trace[k] steers chunk k + 1.
  std::vector<double> alpha_trace;
  /// Classifier score of each chunk. Empty for unsteered runs without a
  /// monitoring classifier.
  std::vector<double> p_red_trace;
  int redundant_chunks = 0;
  /// One entry per chunk; set only for chunks that reached the controller.
  std::vector<std::optional<PidUpdateTrace>> pid_traces;
  /// Cumulative token count at the end of each chunk.
  std::vector<int> chunk_end_tokens;
  /// Classifier score of the last in-window chunk, if any chunk was in the window.
  std::optional<double> final_window_p_red;
  /// Pooled per-chunk records, filled when recording is requested.
  std::vector<TraceRecord> trace;

  std::size_t chunks() const noexcept { return alpha_trace.size(); }
};

struct EpisodeOptions {
  bool record_trace = false;
};

template <class S>
concept ChunkSource = requires(S& s, const S& cs, double alpha, const ControlVector& v) {
  { s.step(alpha, v) } -> std::same_as<ChunkEmission>;
  { cs.done() } -> std::convertible_to<bool>;
  { cs.dim() } -> std::convertible_to<std::size_t>;
};

namespace detail {

/// Shared body of the steered and unsteered loops. `model` may be null only
/// when `gains` is null (no controller means nothing consumes the score).
template <ChunkSource Source>
EpisodeResult run_loop(Source& source, const ClassifierModel* model, const ControlVector& v, const PidGains* gains,
                       const SteeringSchedule& schedule, const EpisodeOptions& opts) {
  validate(schedule);
  if (gains) validate(*gains);
  require_same_dim(v.dim(), source.dim(), "run_episode (control vector vs source)");
  if (model) require_same_dim(model->dim(), source.dim(), "run_episode (classifier vs source)");

  EpisodeResult result;
  PidState state = init_state();
  int tokens = 0;
  std::uint64_t step = 0;

  while (!source.done() && tokens < schedule.max_tokens) {
    ChunkEmission em;
    try {
      em = source.step(state.alpha, v);
    } catch (const ValidationError& e) {
      throw ValidationError("chunk source failed at chunk " + std::to_string(step) + ", token " +
                            std::to_string(tokens) + ": " + e.what());
    }
    ensure(em.tokens_emitted >= 1 && em.hidden_states.size() == static_cast<std::size_t>(em.tokens_emitted),
           "chunk source emitted an inconsistent chunk");

    bool budget_hit = false;
    if (tokens + em.tokens_emitted > schedule.max_tokens) {
      em.tokens_emitted = schedule.max_tokens - tokens;
      em.hidden_states.resize(static_cast<std::size_t>(em.tokens_emitted));
      budget_hit = true;
    }
    tokens += em.tokens_emitted;
    if (em.true_label == RedundancyLabel::Redundant) ++result.redundant_chunks;

    std::optional<PidUpdateTrace> pid_trace;
    const bool window = in_window(schedule, tokens - 1);
    ChunkFeatures x;
    if (model || opts.record_trace) x = pool_chunk(em.hidden_states);
    if (model) {
      const double p = predict_proba(*model, x);
      result.p_red_trace.push_back(p);
      if (window) result.final_window_p_red = p;
      if (window && gains) {
        auto [next, tr] = update(state, *gains, p);
        state = next;
        pid_trace = tr;
      }
    }
    if (opts.record_trace) {
      TraceRecord rec;
      rec.step_index = step;
      rec.features = std::move(x);
      rec.true_label = em.true_label;
      rec.token_count = em.tokens_emitted;
      result.trace.push_back(std::move(rec));
    }
    ensure(state.alpha >= 0.0 && (!gains || state.alpha <= gains->alpha_max), "alpha left [0, alpha_max]");

    result.alpha_trace.push_back(state.alpha);
    result.pid_traces.push_back(pid_trace);
    result.chunk_end_tokens.push_back(tokens);
    ++step;

    if (budget_hit) {
      result.solved = false;
      break;
    }
    if (em.done) {
      result.solved = em.solved;
      break;
    }
  }
  result.tokens_used = tokens;
  ensure(result.tokens_used <= schedule.max_tokens, "episode exceeded its token budget");
  return result;
}

}  // namespace detail

/// Closed-loop episode: pool -> classify -> PID update (in window) -> steer.
/// The controller starts from the zero state on every call.
template <ChunkSource Source>
EpisodeResult run_episode(Source& source, const ClassifierModel& model, const ControlVector& v, const PidGains& gains,
                          const SteeringSchedule& schedule, const EpisodeOptions& opts = {}) {
  return detail::run_loop(source, &model, v, &gains, schedule, opts);
}

/// Steering-free episode (alpha identically zero). With a `monitor`
/// classifier the chunk scores are still recorded.
template <ChunkSource Source>
EpisodeResult run_unsteered(Source& source, const SteeringSchedule& schedule,
                            const ClassifierModel* monitor = nullptr, const EpisodeOptions& opts = {}) {
  ControlVector zero;
  zero.direction.assign(source.dim(), 0.0);
  zero.n_required = zero.n_redundant = 1;
  return detail::run_loop(source, monitor, zero, nullptr, schedule, opts);
}

/// Open-loop replay of recorded chunks through the same control path. The
/// recorded states cannot react to steering, so alpha only reaches the
/// output: `trace` holds each chunk's features steered with the alpha that
/// was in effect for it. Per-token records are grouped into `chunk_size`
/// chunks.
inline EpisodeResult replay_trace(std::span<const TraceRecord> records, const ClassifierModel& model,
                                  const ControlVector& v, const PidGains& gains, const SteeringSchedule& schedule,
                                  int chunk_size) {
  validate(schedule);
  validate(gains);
  detail::require(chunk_size >= 1, "replay_trace: chunk_size must be >= 1");
  detail::require_same_dim(v.dim(), model.dim(), "replay_trace (control vector vs classifier)");

  EpisodeResult result;
  if (records.empty()) return result;

  const bool pooled = !records.front().features.empty();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    detail::require(pooled ? (!r.features.empty() && r.hidden_states.empty())
                           : (r.features.empty() && r.hidden_states.size() == 1),
                    "replay_trace: record " + std::to_string(i) + " mixes pooled and per-token layouts");
    if (i > 0)
      detail::require(r.step_index > records[i - 1].step_index,
                      "replay_trace: step_index not increasing at record " + std::to_string(i));
  }

  struct Chunk {
    ChunkFeatures x;
    int tokens;
    std::optional<RedundancyLabel> label;
  };
  std::vector<Chunk> chunks;
  if (pooled) {
    for (const auto& r : records) {
      const int n = r.token_count.value_or(chunk_size);
      detail::require(n >= 1, "replay_trace: token_count must be >= 1");
      chunks.push_back({r.features, n, r.true_label});
    }
  } else {
    const auto cs = static_cast<std::size_t>(chunk_size);
    for (std::size_t begin = 0; begin < records.size(); begin += cs) {
      const std::size_t end = std::min(records.size(), begin + cs);
      std::vector<HiddenVector> states;
      for (std::size_t i = begin; i < end; ++i) states.push_back(records[i].hidden_states.front());
      chunks.push_back({pool_chunk(states), static_cast<int>(end - begin), records[begin].true_label});
    }
  }

  PidState state = init_state();
  int tokens = 0;
  for (const auto& c : chunks) {
    if (tokens >= schedule.max_tokens) break;
    const int n = std::min(c.tokens, schedule.max_tokens - tokens);
    tokens += n;
    if (c.label == RedundancyLabel::Redundant) ++result.redundant_chunks;
    const double p = predict_proba(model, c.x);
    result.p_red_trace.push_back(p);
    TraceRecord out;
    out.step_index = result.trace.size();
    out.features = apply_steering(c.x, state.alpha, v);
    out.true_label = c.label;
    out.token_count = n;
    result.trace.push_back(std::move(out));
    std::optional<PidUpdateTrace> pid_trace;
    if (in_window(schedule, tokens - 1)) {
      result.final_window_p_red = p;
      auto [next, tr] = update(state, gains, p);
      state = next;
      pid_trace = tr;
    }
    result.alpha_trace.push_back(state.alpha);
    result.pid_traces.push_back(pid_trace);
    result.chunk_end_tokens.push_back(tokens);
  }
  result.tokens_used = tokens;
  return result;
}

/// Index of the first chunk whose alpha reached `alpha_max`, if any.
inline std::optional<std::size_t> saturation_step(const EpisodeResult& r, double alpha_max) {
  for (std::size_t k = 0; k < r.alpha_trace.size(); ++k)
    if (r.alpha_trace[k] >= alpha_max) return k;
  return std::nullopt;
}

// --- batches ---------------------------------------------------------------

enum class Arm { Steered, Baseline };

inline const char* to_string(Arm a) { return a == Arm::Steered ? "steered" : "baseline"; }

/// Everything needed to run episodes of either arm on the simulated plant.
struct BatchSpec {
  PlantConfig plant;
  ClassifierModel model;
  ControlVector vector;
  PidGains gains;
  SteeringSchedule schedule;
};

struct RunMetrics {
  std::size_t episodes = 0;
  double solve_rate = 0.0;
  double mean_tokens = 0.0;
  double mean_token_reduction_vs_baseline = 0.0;
  /// Mean classifier score of the last in-window chunk; NaN if no episode had one.
  double mean_terminal_p_red = std::numeric_limits<double>::quiet_NaN();
  double mean_redundant_fraction = 0.0;
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. The first
/// exception (by episode index) is rethrown with the index attached.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const IoError& e) {
      throw IoError("episode " + std::to_string(i) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("episode " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw InvariantError("episode " + std::to_string(i) + ": " + e.what());
    }
  }
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Episodes of one arm; episode i runs on a plant seeded with
/// derive_seed(master_seed, i), so arms with equal master seeds are matched.
/// The baseline arm keeps alpha at zero and uses the classifier only to
/// record scores.
inline std::vector<EpisodeResult> run_arm(const BatchSpec& spec, Arm arm, std::size_t n_episodes,
                                          std::uint64_t master_seed, unsigned threads = default_threads(),
                                          const EpisodeOptions& opts = {}) {
  detail::require(n_episodes >= 1, "run_arm: n_episodes must be >= 1");
  validate(spec.plant);
  validate(spec.schedule);
  validate(spec.gains);
  std::vector<EpisodeResult> out(n_episodes);
  parallel_for(n_episodes, threads, [&](std::size_t i) {
    PlantConfig pc = spec.plant;
    pc.seed = derive_seed(master_seed, i);
    ReasoningPlant plant(pc);
    out[i] = arm == Arm::Steered ? run_episode(plant, spec.model, spec.vector, spec.gains, spec.schedule, opts)
                                 : run_unsteered(plant, spec.schedule, &spec.model, opts);
  });
  return out;
}

/// Aggregates one arm. `baseline_mean_tokens` (when given) sets the token
/// reduction 1 - mean_tokens / baseline_mean_tokens.
inline RunMetrics summarize(std::span<const EpisodeResult> episodes,
                            std::optional<double> baseline_mean_tokens = std::nullopt) {
  detail::require(!episodes.empty(), "summarize: no episodes");
  RunMetrics m;
  m.episodes = episodes.size();
  double solved = 0, tokens = 0, red_frac = 0, p_sum = 0;
  std::size_t p_count = 0;
  for (const auto& e : episodes) {
    solved += e.solved ? 1.0 : 0.0;
    tokens += e.tokens_used;
    red_frac += e.chunks() ? static_cast<double>(e.redundant_chunks) / static_cast<double>(e.chunks()) : 0.0;
    if (e.final_window_p_red) {
      p_sum += *e.final_window_p_red;
      ++p_count;
    }
  }
  const double n = static_cast<double>(episodes.size());
  m.solve_rate = solved / n;
  m.mean_tokens = tokens / n;
  m.mean_redundant_fraction = red_frac / n;
  if (p_count) m.mean_terminal_p_red = p_sum / static_cast<double>(p_count);
  if (baseline_mean_tokens && *baseline_mean_tokens > 0.0)
    m.mean_token_reduction_vs_baseline = 1.0 - m.mean_tokens / *baseline_mean_tokens;
  return m;
}

struct BatchResult {
  RunMetrics steered;
  RunMetrics baseline;
  std::vector<EpisodeResult> steered_episodes;
  std::vector<EpisodeResult> baseline_episodes;
};

/// Both arms on matched seeds, each summarized against the baseline.
inline BatchResult run_batch(const BatchSpec& spec, std::size_t n_episodes, std::uint64_t master_seed,
                             unsigned threads = default_threads()) {
  BatchResult r;
  r.baseline_episodes = run_arm(spec, Arm::Baseline, n_episodes, master_seed, threads);
  r.steered_episodes = run_arm(spec, Arm::Steered, n_episodes, master_seed, threads);
  r.baseline = summarize(r.baseline_episodes);
  r.baseline.mean_token_reduction_vs_baseline = 0.0;
  r.steered = summarize(r.steered_episodes, r.baseline.mean_tokens);
  return r;
}

}  // namespace steerpid
