#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "steerpid/harness.hpp"
#include "steerpid/inference_loop.hpp"

using namespace steerpid;

namespace {

const OfflineArtifacts& artifacts() {
  static const OfflineArtifacts a = build_offline_artifacts(default_config());
  return a;
}

PlantConfig plant(std::uint64_t seed) {
  PlantConfig p = resolved(PlantConfig{});
  p.seed = seed;
  return p;
}

EpisodeResult steered(std::uint64_t seed, const PidGains& g = {}, const SteeringSchedule& s = {},
                      EpisodeOptions opts = {}) {
  ReasoningPlant p(plant(seed));
  return run_episode(p, artifacts().model, artifacts().vector, g, s, opts);
}

/// Emits chunks of constant features; fails on demand.
struct ScriptedSource {
  std::size_t d = 4;
  int chunk = 24;
  int remaining = 10;
  int fail_at = -1;
  int emitted = 0;
  std::vector<double> value = std::vector<double>(4, 0.0);

  bool done() const { return remaining == 0; }
  std::size_t dim() const { return d; }
  ChunkEmission step(double alpha, const ControlVector& v) {
    if (emitted == fail_at) throw ValidationError("sensor unplugged");
    ChunkEmission em;
    em.tokens_emitted = chunk;
    em.hidden_states.assign(static_cast<std::size_t>(chunk), apply_steering(value, alpha, v));
    ++emitted;
    em.done = --remaining == 0;
    return em;
  }
};

}  // namespace

static_assert(ChunkSource<ReasoningPlant>);
static_assert(ChunkSource<ScriptedSource>);

TEST(InferenceLoop, ZeroCeilingMatchesUnsteeredRun) {
  PidGains off;
  off.alpha_max = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = steered(s, off);
    ReasoningPlant p(plant(s));
    const auto b = run_unsteered(p, SteeringSchedule{}, &artifacts().model);
    EXPECT_EQ(a.tokens_used, b.tokens_used);
    EXPECT_EQ(a.solved, b.solved);
    EXPECT_EQ(a.redundant_chunks, b.redundant_chunks);
    EXPECT_EQ(a.alpha_trace, b.alpha_trace);
    EXPECT_EQ(a.p_red_trace, b.p_red_trace);
  }
}

TEST(InferenceLoop, EmptyWindowNeverUpdates) {
  SteeringSchedule s;
  s.t_init = s.max_tokens;
  const auto r = steered(1, PidGains{}, s);
  for (double a : r.alpha_trace) EXPECT_EQ(a, 0.0);
  for (const auto& t : r.pid_traces) EXPECT_FALSE(t.has_value());
  EXPECT_FALSE(r.final_window_p_red.has_value());
}

TEST(InferenceLoop, WindowDiscipline) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = steered(seed);
    ASSERT_EQ(r.alpha_trace.size(), r.p_red_trace.size());
    ASSERT_EQ(r.alpha_trace.size(), r.pid_traces.size());
    ASSERT_EQ(r.alpha_trace.size(), r.chunk_end_tokens.size());
    double last_alpha = 0.0;
    for (std::size_t k = 0; k < r.chunks(); ++k) {
      const int last_token = r.chunk_end_tokens[k] - 1;
      const bool inside = last_token >= 80 && last_token - 80 <= 60;
      // 24-token chunks ending at token indices 95 and 119 are the only ones inside.
      EXPECT_EQ(inside, k == 3 || k == 4);
      EXPECT_EQ(r.pid_traces[k].has_value(), inside);
      if (!inside) {
        EXPECT_EQ(r.alpha_trace[k], last_alpha) << "alpha moved outside the window";
      }
      last_alpha = r.alpha_trace[k];
    }
    EXPECT_LE(r.tokens_used, 2048);
  }
}

TEST(InferenceLoop, EpisodesAreIsolated) {
  const auto first = steered(4);
  steered(5);
  const auto again = steered(4);
  EXPECT_EQ(first.alpha_trace, again.alpha_trace);
  EXPECT_EQ(first.p_red_trace, again.p_red_trace);
  EXPECT_EQ(first.tokens_used, again.tokens_used);
}

TEST(InferenceLoop, ScheduleBudgetCapsTokens) {
  SteeringSchedule s;
  s.max_tokens = 100;
  const auto r = steered(2, PidGains{}, s);
  EXPECT_EQ(r.tokens_used, 100);
  EXPECT_EQ(r.chunk_end_tokens.back(), 100);
  EXPECT_FALSE(r.solved);
}

TEST(InferenceLoop, DimensionMismatch) {
  ScriptedSource src;
  ControlVector v;
  v.direction.assign(5, 0.0);
  ClassifierModel m;
  m.weights.assign(4, 0.0);
  EXPECT_THROW(run_episode(src, m, v, PidGains{}, SteeringSchedule{}), ValidationError);
  v.direction.assign(4, 0.0);
  m.weights.assign(3, 0.0);
  EXPECT_THROW(run_episode(src, m, v, PidGains{}, SteeringSchedule{}), ValidationError);
}

TEST(InferenceLoop, SourceFailureCarriesContext) {
  ScriptedSource src;
  src.fail_at = 3;
  ControlVector v;
  v.direction.assign(4, 0.0);
  ClassifierModel m;
  m.weights.assign(4, 0.0);
  try {
    run_episode(src, m, v, PidGains{}, SteeringSchedule{});
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("chunk 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("token 72"), std::string::npos) << msg;
    EXPECT_NE(msg.find("sensor unplugged"), std::string::npos) << msg;
  }
}

TEST(Replay, ReproducesRecordedEpisodeBitwise) {
  EpisodeOptions opts;
  opts.record_trace = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = steered(seed, PidGains{}, SteeringSchedule{}, opts);
    ASSERT_EQ(r.trace.size(), r.chunks());
    // Through the file format as well.
    TraceHeader h;
    h.dim = 64;
    const Trace t = parse_trace(serialize_trace(h, r.trace));
    const auto rep = replay_trace(t.records, artifacts().model, artifacts().vector, PidGains{}, SteeringSchedule{}, 24);
    EXPECT_EQ(rep.alpha_trace, r.alpha_trace);
    EXPECT_EQ(rep.p_red_trace, r.p_red_trace);
    EXPECT_EQ(rep.tokens_used, r.tokens_used);
    EXPECT_EQ(rep.redundant_chunks, r.redundant_chunks);
  }
}

TEST(Replay, EmptyTrace) {
  const auto r = replay_trace({}, artifacts().model, artifacts().vector, PidGains{}, SteeringSchedule{}, 24);
  EXPECT_EQ(r.tokens_used, 0);
  EXPECT_TRUE(r.alpha_trace.empty());
  EXPECT_TRUE(r.p_red_trace.empty());
}

TEST(Replay, ConstantRedundantFeaturesSaturateAtOracleStep) {
  const auto& model = artifacts().model;
  std::vector<TraceRecord> recs(120);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    recs[k].step_index = k;
    recs[k].features = resolved(PlantConfig{}).mu_redundant;
  }
  const double p = predict_proba(model, recs[0].features);
  ASSERT_GT(p, 0.5);

  SteeringSchedule wide;
  wide.t_init = 0;
  wide.t_window = 1 << 20;
  wide.max_tokens = 1 << 20;
  const auto r = replay_trace(recs, model, artifacts().vector, PidGains{}, wide, 24);
  const long expected = oracle::saturation_index(oracle::default_gains(), p, 120);
  ASSERT_GE(expected, 0);
  const auto got = saturation_step(r, 0.40);
  ASSERT_TRUE(got.has_value());
  EXPECT_EQ(static_cast<long>(*got), expected);
  EXPECT_EQ(r.alpha_trace.back(), 0.40);

  // Under the default 60-token window only two chunks reach the controller.
  const auto narrow = replay_trace(recs, model, artifacts().vector, PidGains{}, SteeringSchedule{}, 24);
  oracle::ScalarPid o;
  oracle::step(o, oracle::default_gains(), p);
  oracle::step(o, oracle::default_gains(), p);
  EXPECT_EQ(narrow.alpha_trace.back(), o.alpha);
}

TEST(Replay, PerTokenRecordsArePooledIntoChunks) {
  EpisodeOptions opts;
  ScriptedSource src;
  src.value = {0.3, -0.2, 0.1, 0.0};
  ControlVector v;
  v.direction = {1.0, 0.0, 0.0, 0.0};
  ClassifierModel m;
  m.weights = {4.0, -1.0, 0.5, 0.0};
  m.bias = 0.2;
  const auto r = run_episode(src, m, v, PidGains{}, SteeringSchedule{});

  std::vector<TraceRecord> tokens;
  for (std::size_t t = 0; t < static_cast<std::size_t>(r.tokens_used); ++t) {
    TraceRecord rec;
    rec.step_index = t;
    const std::size_t chunk = t / 24;
    const double alpha_in = chunk == 0 ? 0.0 : r.alpha_trace[chunk - 1];
    rec.hidden_states = {apply_steering(src.value, alpha_in, v)};
    tokens.push_back(rec);
  }
  const auto rep = replay_trace(tokens, m, v, PidGains{}, SteeringSchedule{}, 24);
  ASSERT_EQ(rep.chunks(), r.chunks());
  for (std::size_t k = 0; k < r.chunks(); ++k) {
    EXPECT_NEAR(rep.p_red_trace[k], r.p_red_trace[k], 1e-12);
    EXPECT_NEAR(rep.alpha_trace[k], r.alpha_trace[k], 1e-12);
  }
}

TEST(Replay, RejectsMixedOrNonMonotoneRecords) {
  std::vector<TraceRecord> recs(2);
  recs[0].features = {1.0, 2.0};
  recs[1].step_index = 0;
  recs[1].features = {1.0, 2.0};
  ClassifierModel m;
  m.weights.assign(2, 0.0);
  ControlVector v;
  v.direction.assign(2, 0.0);
  EXPECT_THROW(replay_trace(recs, m, v, PidGains{}, SteeringSchedule{}, 24), ValidationError);
  recs[1].step_index = 1;
  recs[1].features.clear();
  recs[1].hidden_states = {{1.0, 2.0}};
  EXPECT_THROW(replay_trace(recs, m, v, PidGains{}, SteeringSchedule{}, 24), ValidationError);
}

TEST(Batch, SingleEpisodeMetricsEqualEpisode) {
  const BatchSpec spec = make_spec(default_config(), artifacts().model, artifacts().vector);
  const auto eps = run_arm(spec, Arm::Steered, 1, 42, 1);
  const auto m = summarize(eps);
  EXPECT_EQ(m.episodes, 1u);
  EXPECT_EQ(m.mean_tokens, eps[0].tokens_used);
  EXPECT_EQ(m.solve_rate, eps[0].solved ? 1.0 : 0.0);
  EXPECT_EQ(m.mean_terminal_p_red, *eps[0].final_window_p_red);
}

TEST(Batch, DisabledSteeringGivesZeroReduction) {
  HarnessConfig c = default_config();
  c.gains.alpha_max = 0.0;
  const BatchSpec spec = make_spec(c, artifacts().model, artifacts().vector);
  const auto r = run_batch(spec, 20, 7, 2);
  EXPECT_EQ(r.steered.mean_token_reduction_vs_baseline, 0.0);
  EXPECT_EQ(r.steered.mean_tokens, r.baseline.mean_tokens);
  EXPECT_EQ(r.steered.solve_rate, r.baseline.solve_rate);
}

TEST(Batch, ThreadCountDoesNotChangeResults) {
  const BatchSpec spec = make_spec(default_config(), artifacts().model, artifacts().vector);
  const auto a = run_arm(spec, Arm::Steered, 12, 3, 1);
  const auto b = run_arm(spec, Arm::Steered, 12, 3, 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].alpha_trace, b[i].alpha_trace);
    EXPECT_EQ(a[i].tokens_used, b[i].tokens_used);
  }
}

TEST(Batch, ErrorsCarryEpisodeIndex) {
  BatchSpec spec = make_spec(default_config(), artifacts().model, artifacts().vector);
  spec.vector.direction.resize(10);
  try {
    run_arm(spec, Arm::Steered, 3, 1, 1);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("episode 0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_arm(spec, Arm::Steered, 0, 1, 1), ValidationError);
}
