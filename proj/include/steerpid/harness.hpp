#pragma once

// Experiment harness: configuration file, offline phase (data generation,
// classifier training, vector extraction) and the simulate / sweep / replay /
// report commands that the CLI exposes.
//
// Output directory precedence: --out flag, then the STEERPID_OUT_DIR
// environment variable, then paths.out_dir from the config file.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerpid/control_vector.hpp"
#include "steerpid/error.hpp"
#include "steerpid/features_classifier.hpp"
#include "steerpid/inference_loop.hpp"
#include "steerpid/pid_controller.hpp"
#include "steerpid/reasoning_plant.hpp"
#include "steerpid/seeding.hpp"
#include "steerpid/trace_io.hpp"

namespace steerpid {

inline constexpr const char* kOutDirEnv = "STEERPID_OUT_DIR";

struct HarnessPaths {
  std::string out_dir = "steerpid_out";
  std::string dataset = "dataset.jsonl";
  std::string heldout = "heldout.jsonl";
  std::string model = "classifier.model";
  std::string vector = "control.vec";
};

/// Grid for `sweep`. An empty axis keeps the configured gain.
struct SweepGrid {
  std::vector<double> kp, ki, kd, p_target;
  /// Rows must reach baseline solve rate minus this to rank as feasible.
  double solve_rate_tolerance = 0.02;

  bool empty() const noexcept { return kp.empty() && ki.empty() && kd.empty() && p_target.empty(); }
};

struct HarnessConfig {
  PlantConfig plant;
  PidGains gains;
  SteeringSchedule schedule;
  TrainConfig train;
  bool normalize_vector = false;
  SweepGrid sweep;
  HarnessPaths paths;
  int n_train_chunks = 100;
  int n_episodes = 200;
  std::uint64_t seed = 1234;
  unsigned threads = 0;  // 0: one per hardware thread
};

// Independent random streams derived from the master seed.
enum class Stream : std::uint64_t { TrainingData = 1, HeldoutData = 2, ClassifierShuffle = 3, Episodes = 4 };

inline std::uint64_t stream_seed(const HarnessConfig& cfg, Stream s) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
}

inline void validate(const HarnessConfig& cfg) {
  validate(cfg.plant);
  validate(cfg.gains);
  validate(cfg.schedule);
  validate(cfg.train);
  detail::require(cfg.n_train_chunks >= 2, "config: n_train_chunks must be >= 2");
  detail::require(cfg.n_episodes >= 1, "config: n_episodes must be >= 1");
  detail::require(cfg.train.chunk_size == cfg.plant.chunk_size, "config: train.chunk_size must equal plant.chunk_size");
  detail::require(std::isfinite(cfg.sweep.solve_rate_tolerance) && cfg.sweep.solve_rate_tolerance >= 0.0,
                  "config: sweep.solve_rate_tolerance must be >= 0");
}

// --- JSON mapping ----------------------------------------------------------

namespace detail {

/// Reads `key` from `obj` into `out` when present; rejects wrong types.
template <class T>
void read_key(const nlohmann::json& obj, const char* section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config: bad type for ") + section + "." + key);
  }
}

inline void reject_unknown(const nlohmann::json& obj, const char* section, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ValidationError(std::string("config: section '") + section + "' must be an object");
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* s) { return k == s; }))
      throw ValidationError(std::string("config: unknown key '") + section + "." + k + "'");
  }
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const HarnessConfig& c, bool include_paths = true) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["n_train_chunks"] = c.n_train_chunks;
  j["n_episodes"] = c.n_episodes;
  const PlantConfig p = resolved(c.plant);
  j["plant"] = {{"dim", p.dim},
                {"chunk_size", p.chunk_size},
                {"mu_required", p.mu_required},
                {"mu_redundant", p.mu_redundant},
                {"noise_sigma", p.noise_sigma},
                {"base_redundancy_logit", p.base_redundancy_logit},
                {"steering_coupling", p.steering_coupling},
                {"required_chunks_to_solve", p.required_chunks_to_solve},
                {"max_tokens", p.max_tokens},
                {"distraction_penalty", p.distraction_penalty}};
  j["gains"] = {{"kp", c.gains.kp},
                {"ki", c.gains.ki},
                {"kd", c.gains.kd},
                {"p_target", c.gains.p_target},
                {"alpha_max", c.gains.alpha_max},
                {"i_max", c.gains.i_max},
                {"epsilon_margin", c.gains.epsilon_margin}};
  j["schedule"] = {
      {"t_init", c.schedule.t_init}, {"t_window", c.schedule.t_window}, {"max_tokens", c.schedule.max_tokens}};
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"epochs", c.train.epochs},
                {"l2_penalty", c.train.l2_penalty},       {"shuffle", c.train.shuffle},
                {"standardize", c.train.standardize},     {"feature_layer", c.train.feature_layer}};
  j["vector"] = {{"normalize", c.normalize_vector}};
  j["sweep"] = {{"kp", c.sweep.kp},
                {"ki", c.sweep.ki},
                {"kd", c.sweep.kd},
                {"p_target", c.sweep.p_target},
                {"solve_rate_tolerance", c.sweep.solve_rate_tolerance}};
  if (include_paths) {
    j["threads"] = c.threads;
    j["paths"] = {{"out_dir", c.paths.out_dir},
                  {"dataset", c.paths.dataset},
                  {"heldout", c.paths.heldout},
                  {"model", c.paths.model},
                  {"vector", c.paths.vector}};
  }
  return j;
}

/// Builds a config from JSON. Missing keys keep their defaults; unknown keys
/// are rejected.
inline HarnessConfig config_from_json(const nlohmann::json& j) {
  using detail::read_key;
  HarnessConfig c;
  detail::reject_unknown(j, "<root>",
                         {"seed", "n_train_chunks", "n_episodes", "threads", "plant", "gains", "schedule", "train",
                          "vector", "sweep", "paths"});
  read_key(j, "<root>", "seed", c.seed);
  read_key(j, "<root>", "n_train_chunks", c.n_train_chunks);
  read_key(j, "<root>", "n_episodes", c.n_episodes);
  read_key(j, "<root>", "threads", c.threads);
  if (j.contains("plant")) {
    const auto& s = j["plant"];
    detail::reject_unknown(s, "plant",
                           {"dim", "chunk_size", "mu_required", "mu_redundant", "noise_sigma", "base_redundancy_logit",
                            "steering_coupling", "required_chunks_to_solve", "max_tokens", "distraction_penalty"});
    read_key(s, "plant", "dim", c.plant.dim);
    read_key(s, "plant", "chunk_size", c.plant.chunk_size);
    read_key(s, "plant", "mu_required", c.plant.mu_required);
    read_key(s, "plant", "mu_redundant", c.plant.mu_redundant);
    read_key(s, "plant", "noise_sigma", c.plant.noise_sigma);
    read_key(s, "plant", "base_redundancy_logit", c.plant.base_redundancy_logit);
    read_key(s, "plant", "steering_coupling", c.plant.steering_coupling);
    read_key(s, "plant", "required_chunks_to_solve", c.plant.required_chunks_to_solve);
    read_key(s, "plant", "max_tokens", c.plant.max_tokens);
    read_key(s, "plant", "distraction_penalty", c.plant.distraction_penalty);
  }
  if (j.contains("gains")) {
    const auto& s = j["gains"];
    detail::reject_unknown(s, "gains", {"kp", "ki", "kd", "p_target", "alpha_max", "i_max", "epsilon_margin"});
    read_key(s, "gains", "kp", c.gains.kp);
    read_key(s, "gains", "ki", c.gains.ki);
    read_key(s, "gains", "kd", c.gains.kd);
    read_key(s, "gains", "p_target", c.gains.p_target);
    read_key(s, "gains", "alpha_max", c.gains.alpha_max);
    read_key(s, "gains", "i_max", c.gains.i_max);
    read_key(s, "gains", "epsilon_margin", c.gains.epsilon_margin);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    detail::reject_unknown(s, "schedule", {"t_init", "t_window", "max_tokens"});
    read_key(s, "schedule", "t_init", c.schedule.t_init);
    read_key(s, "schedule", "t_window", c.schedule.t_window);
    read_key(s, "schedule", "max_tokens", c.schedule.max_tokens);
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    detail::reject_unknown(s, "train",
                           {"learning_rate", "epochs", "l2_penalty", "shuffle", "standardize", "feature_layer"});
    read_key(s, "train", "learning_rate", c.train.learning_rate);
    read_key(s, "train", "epochs", c.train.epochs);
    read_key(s, "train", "l2_penalty", c.train.l2_penalty);
    read_key(s, "train", "shuffle", c.train.shuffle);
    read_key(s, "train", "standardize", c.train.standardize);
    read_key(s, "train", "feature_layer", c.train.feature_layer);
  }
  if (j.contains("vector")) {
    detail::reject_unknown(j["vector"], "vector", {"normalize"});
    read_key(j["vector"], "vector", "normalize", c.normalize_vector);
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    detail::reject_unknown(s, "sweep", {"kp", "ki", "kd", "p_target", "solve_rate_tolerance"});
    read_key(s, "sweep", "kp", c.sweep.kp);
    read_key(s, "sweep", "ki", c.sweep.ki);
    read_key(s, "sweep", "kd", c.sweep.kd);
    read_key(s, "sweep", "p_target", c.sweep.p_target);
    read_key(s, "sweep", "solve_rate_tolerance", c.sweep.solve_rate_tolerance);
  }
  if (j.contains("paths")) {
    const auto& s = j["paths"];
    detail::reject_unknown(s, "paths", {"out_dir", "dataset", "heldout", "model", "vector"});
    read_key(s, "paths", "out_dir", c.paths.out_dir);
    read_key(s, "paths", "dataset", c.paths.dataset);
    read_key(s, "paths", "heldout", c.paths.heldout);
    read_key(s, "paths", "model", c.paths.model);
    read_key(s, "paths", "vector", c.paths.vector);
  }
  c.plant = resolved(c.plant);
  c.train.chunk_size = c.plant.chunk_size;
  validate(c);
  return c;
}

inline HarnessConfig default_config() {
  HarnessConfig c;
  c.plant = resolved(c.plant);
  return c;
}

inline HarnessConfig load_config(const std::string& path) {
  const std::string text = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": malformed JSON: " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a 64 of the canonical experiment settings (paths and thread count
/// excluded), as 16 hex digits. Embedded in every output file.
inline std::string config_hash(const HarnessConfig& c) {
  const std::string canon = to_json(c, false).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string resolve_out_dir(const HarnessConfig& c, const std::optional<std::string>& cli_out) {
  if (cli_out && !cli_out->empty()) return *cli_out;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return c.paths.out_dir;
}

/// `name` under `out_dir` unless it is already absolute.
inline std::string artifact_path(const std::string& out_dir, const std::string& name) {
  const std::filesystem::path p(name);
  return p.is_absolute() ? p.string() : (std::filesystem::path(out_dir) / p).string();
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// --- offline phase ---------------------------------------------------------

/// Labeled pooled chunks drawn from unsteered plant episodes (episode i on
/// seed derive_seed(stream_seed, i)) until `n` chunks are collected.
inline std::vector<TraceRecord> generate_chunks(const PlantConfig& plant, std::size_t n, std::uint64_t stream) {
  std::vector<TraceRecord> out;
  out.reserve(n);
  SteeringSchedule unlimited{0, 0, plant.max_tokens};
  for (std::uint64_t ep = 0; out.size() < n; ++ep) {
    PlantConfig pc = plant;
    pc.seed = derive_seed(stream, ep);
    ReasoningPlant p(pc);
    EpisodeOptions opts;
    opts.record_trace = true;
    const auto r = run_unsteered(p, unlimited, nullptr, opts);
    for (const auto& rec : r.trace) {
      if (out.size() == n) break;
      TraceRecord copy = rec;
      copy.step_index = out.size();
      out.push_back(std::move(copy));
    }
  }
  return out;
}

inline TraceHeader dataset_header(const HarnessConfig& c) {
  TraceHeader h;
  h.dim = static_cast<std::size_t>(c.plant.dim);
  h.chunk_size = c.plant.chunk_size;
  h.pooled = true;
  h.config_hash = config_hash(c);
  return h;
}

struct GenDataReport {
  std::string dataset_path, heldout_path;
  std::size_t n_redundant = 0, n_required = 0;
};

inline GenDataReport cmd_gen_data(const HarnessConfig& c, const std::string& out_dir) {
  validate(c);
  ensure_dir(out_dir);
  const auto n = static_cast<std::size_t>(c.n_train_chunks);
  const auto train = generate_chunks(c.plant, n, stream_seed(c, Stream::TrainingData));
  const auto held = generate_chunks(c.plant, n, stream_seed(c, Stream::HeldoutData));
  GenDataReport rep;
  rep.dataset_path = artifact_path(out_dir, c.paths.dataset);
  rep.heldout_path = artifact_path(out_dir, c.paths.heldout);
  write_trace(rep.dataset_path, dataset_header(c), train);
  write_trace(rep.heldout_path, dataset_header(c), held);
  for (const auto& r : train) (r.true_label == RedundancyLabel::Redundant ? rep.n_redundant : rep.n_required) += 1;
  return rep;
}

inline TrainConfig effective_train_config(const HarnessConfig& c) {
  TrainConfig t = c.train;
  t.seed = stream_seed(c, Stream::ClassifierShuffle);
  t.chunk_size = c.plant.chunk_size;
  return t;
}

struct TrainReport {
  ClassifierModel model;
  double final_loss = 0.0;
  std::optional<double> train_accuracy;
  std::optional<double> heldout_accuracy;
};

inline std::vector<LabeledChunk> load_dataset(const std::string& path, const HarnessConfig& c) {
  const Trace t = read_trace(path);
  detail::require(t.header.dim == static_cast<std::size_t>(c.plant.dim),
                  path + ": dataset dimension does not match plant.dim");
  return labeled_chunks(t);
}

inline TrainReport cmd_train_classifier(const HarnessConfig& c, const std::string& out_dir) {
  validate(c);
  const auto data = load_dataset(artifact_path(out_dir, c.paths.dataset), c);
  auto res = train_with_history(data, effective_train_config(c));
  TrainReport rep;
  rep.model = std::move(res.model);
  rep.final_loss = res.epoch_loss.back();
  rep.train_accuracy = accuracy(rep.model, data);
  const std::string held = artifact_path(out_dir, c.paths.heldout);
  if (std::filesystem::exists(held)) rep.heldout_accuracy = accuracy(rep.model, load_dataset(held, c));
  save_model(rep.model, artifact_path(out_dir, c.paths.model));
  return rep;
}

struct ExtractReport {
  ControlVector vector;
  double cosine_to_true_gap = 0.0;
};

inline ExtractReport cmd_extract_vector(const HarnessConfig& c, const std::string& out_dir) {
  validate(c);
  const auto data = load_dataset(artifact_path(out_dir, c.paths.dataset), c);
  std::vector<ChunkFeatures> req, red;
  for (const auto& ex : data) (ex.label == RedundancyLabel::Redundant ? red : req).push_back(ex.features);
  ExtractReport rep;
  rep.vector = extract(req, red, c.train.feature_layer, c.normalize_vector);
  const PlantConfig p = resolved(c.plant);
  std::vector<double> gap(p.mu_required.size());
  for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = p.mu_required[i] - p.mu_redundant[i];
  rep.cosine_to_true_gap = cosine_similarity(rep.vector.direction, gap);
  save_vector(rep.vector, artifact_path(out_dir, c.paths.vector));
  return rep;
}

/// Runs the whole offline phase in memory (no files).
struct OfflineArtifacts {
  ClassifierModel model;
  ControlVector vector;
  std::vector<LabeledChunk> training_data;
};

inline OfflineArtifacts build_offline_artifacts(const HarnessConfig& c) {
  validate(c);
  OfflineArtifacts a;
  for (auto& r : generate_chunks(c.plant, static_cast<std::size_t>(c.n_train_chunks),
                                 stream_seed(c, Stream::TrainingData)))
    a.training_data.push_back({std::move(r.features), *r.true_label});
  a.model = train(a.training_data, effective_train_config(c));
  std::vector<ChunkFeatures> req, red;
  for (const auto& ex : a.training_data) (ex.label == RedundancyLabel::Redundant ? red : req).push_back(ex.features);
  a.vector = extract(req, red, c.train.feature_layer, c.normalize_vector);
  return a;
}

// --- online phase ----------------------------------------------------------

inline void check_artifacts(const HarnessConfig& c, const ClassifierModel& m, const ControlVector* v) {
  detail::require(m.dim() == static_cast<std::size_t>(c.plant.dim), "classifier dimension does not match plant.dim");
  detail::require(m.chunk_size == c.plant.chunk_size, "classifier chunk_size does not match plant.chunk_size");
  if (v) detail::require(v->dim() == static_cast<std::size_t>(c.plant.dim), "control vector dimension mismatch");
}

inline BatchSpec make_spec(const HarnessConfig& c, ClassifierModel model, ControlVector vector) {
  return BatchSpec{c.plant, std::move(model), std::move(vector), c.gains, c.schedule};
}

inline unsigned effective_threads(const HarnessConfig& c) { return c.threads ? c.threads : default_threads(); }

inline std::string episodes_csv(const HarnessConfig& c, Arm arm, std::span<const EpisodeResult> eps) {
  std::ostringstream out;
  out << "# steerpid episodes arm=" << to_string(arm) << " config_hash=" << config_hash(c) << '\n';
  out << "episode,solved,tokens_used,chunks,redundant_chunks,final_alpha,final_window_p_red\n";
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const auto& e = eps[i];
    out << i << ',' << (e.solved ? 1 : 0) << ',' << e.tokens_used << ',' << e.chunks() << ',' << e.redundant_chunks
        << ',' << fmt_real(e.alpha_trace.empty() ? 0.0 : e.alpha_trace.back()) << ','
        << (e.final_window_p_red ? fmt_real(*e.final_window_p_red) : std::string("nan")) << '\n';
  }
  return out.str();
}

inline nlohmann::ordered_json metrics_json(const RunMetrics& m) {
  nlohmann::ordered_json j;
  j["episodes"] = m.episodes;
  j["solve_rate"] = m.solve_rate;
  j["mean_tokens"] = m.mean_tokens;
  j["mean_token_reduction_vs_baseline"] = m.mean_token_reduction_vs_baseline;
  if (std::isnan(m.mean_terminal_p_red))
    j["mean_terminal_p_red"] = nullptr;
  else
    j["mean_terminal_p_red"] = m.mean_terminal_p_red;
  j["mean_redundant_fraction"] = m.mean_redundant_fraction;
  return j;
}

inline std::string summary_json(const HarnessConfig& c, Arm arm, const RunMetrics& m, const RunMetrics& baseline) {
  nlohmann::ordered_json j;
  j["kind"] = "steerpid-summary";
  j["arm"] = to_string(arm);
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  j["metrics"] = metrics_json(m);
  j["baseline_mean_tokens"] = baseline.mean_tokens;
  j["baseline_solve_rate"] = baseline.solve_rate;
  return j.dump(2) + "\n";
}

/// Two-column table (chunk end token, value).
inline std::string two_column(const char* name, std::span<const int> tokens, std::span<const double> values) {
  std::ostringstream out;
  out << "token," << name << '\n';
  for (std::size_t k = 0; k < values.size() && k < tokens.size(); ++k) out << tokens[k] << ',' << fmt_real(values[k]) << '\n';
  return out.str();
}

struct SimulateOptions {
  bool steered = true;
  bool baseline = true;
  std::vector<std::size_t> record_episodes;  // trace files for these episode indices
};

struct SimulateReport {
  std::optional<RunMetrics> steered;
  RunMetrics baseline;
  std::vector<std::string> written;
};

inline SimulateReport cmd_simulate(const HarnessConfig& c, const std::string& out_dir, const SimulateOptions& opt) {
  validate(c);
  detail::require(opt.steered || opt.baseline, "simulate: no arm selected");
  ensure_dir(out_dir);
  const std::string model_path = artifact_path(out_dir, c.paths.model);
  const std::string vector_path = artifact_path(out_dir, c.paths.vector);

  ClassifierModel model;
  ControlVector vector;
  bool have_model = false;
  if (opt.steered) {
    if (!std::filesystem::exists(model_path)) throw IoError("simulate --steered: missing classifier '" + model_path + "'");
    if (!std::filesystem::exists(vector_path)) throw IoError("simulate --steered: missing control vector '" + vector_path + "'");
    model = load_model(model_path);
    vector = load_vector(vector_path);
    check_artifacts(c, model, &vector);
    have_model = true;
  } else if (std::filesystem::exists(model_path)) {
    // Baseline alone: the classifier, when available, only records scores.
    model = load_model(model_path);
    check_artifacts(c, model, nullptr);
    have_model = true;
  }
  if (!have_model) {
    model.weights.assign(static_cast<std::size_t>(c.plant.dim), 0.0);
    model.chunk_size = c.plant.chunk_size;
  }
  if (vector.direction.empty()) {
    vector.direction.assign(static_cast<std::size_t>(c.plant.dim), 0.0);
    vector.n_required = vector.n_redundant = 1;
  }

  const BatchSpec spec = make_spec(c, model, vector);
  const auto n = static_cast<std::size_t>(c.n_episodes);
  const std::uint64_t master = stream_seed(c, Stream::Episodes);
  const unsigned threads = effective_threads(c);

  EpisodeOptions eopts;
  eopts.record_trace = !opt.record_episodes.empty();

  SimulateReport rep;
  auto base_eps = have_model ? run_arm(spec, Arm::Baseline, n, master, threads, eopts)
                             : [&] {
                                 std::vector<EpisodeResult> out(n);
                                 parallel_for(n, threads, [&](std::size_t i) {
                                   PlantConfig pc = c.plant;
                                   pc.seed = derive_seed(master, i);
                                   ReasoningPlant plant(pc);
                                   out[i] = run_unsteered(plant, c.schedule, nullptr, eopts);
                                 });
                                 return out;
                               }();
  rep.baseline = summarize(base_eps);
  rep.baseline.mean_token_reduction_vs_baseline = 0.0;

  auto write_arm = [&](Arm arm, const std::vector<EpisodeResult>& eps, const RunMetrics& m) {
    const std::string tag = to_string(arm);
    const std::string ep_path = artifact_path(out_dir, "episodes_" + tag + ".csv");
    const std::string sum_path = artifact_path(out_dir, "summary_" + tag + ".json");
    io::write_file(ep_path, episodes_csv(c, arm, eps));
    io::write_file(sum_path, summary_json(c, arm, m, rep.baseline));
    rep.written.push_back(ep_path);
    rep.written.push_back(sum_path);
    for (std::size_t idx : opt.record_episodes) {
      detail::require(idx < eps.size(), "simulate: --record-episode index out of range");
      const auto& e = eps[idx];
      const std::string stem = tag + "_episode" + std::to_string(idx);
      const std::string trace_path = artifact_path(out_dir, "trace_" + stem + ".jsonl");
      write_trace(trace_path, dataset_header(c), e.trace);
      io::write_file(artifact_path(out_dir, "alpha_" + stem + ".csv"), two_column("alpha", e.chunk_end_tokens, e.alpha_trace));
      io::write_file(artifact_path(out_dir, "p_red_" + stem + ".csv"), two_column("p_red", e.chunk_end_tokens, e.p_red_trace));
      rep.written.push_back(trace_path);
    }
  };

  if (opt.baseline) write_arm(Arm::Baseline, base_eps, rep.baseline);
  if (opt.steered) {
    const auto eps = run_arm(spec, Arm::Steered, n, master, threads, eopts);
    rep.steered = summarize(eps, rep.baseline.mean_tokens);
    write_arm(Arm::Steered, eps, *rep.steered);
  }
  return rep;
}

struct SweepRow {
  std::size_t grid_index = 0;
  PidGains gains;
  RunMetrics metrics;
  bool feasible = false;
};

/// Cartesian product of the grid axes (kp outermost, p_target innermost).
inline std::vector<PidGains> expand_grid(const PidGains& base, const SweepGrid& grid) {
  detail::require(!grid.empty(), "sweep: empty grid");
  auto axis = [](const std::vector<double>& v, double dflt) { return v.empty() ? std::vector<double>{dflt} : v; };
  std::vector<PidGains> out;
  for (double kp : axis(grid.kp, base.kp))
    for (double ki : axis(grid.ki, base.ki))
      for (double kd : axis(grid.kd, base.kd))
        for (double pt : axis(grid.p_target, base.p_target)) {
          PidGains g = base;
          g.kp = kp;
          g.ki = ki;
          g.kd = kd;
          g.p_target = pt;
          validate(g);
          out.push_back(g);
        }
  return out;
}

struct SweepReport {
  RunMetrics baseline;
  std::vector<SweepRow> rows;  // in ranked order
  std::string path;
};

/// One steered arm per grid point, all on the episode seeds used by
/// `simulate`. Feasible rows (solve rate within tolerance of baseline) come
/// first, each group ordered by mean tokens then grid index.
inline SweepReport cmd_sweep(const HarnessConfig& c, const std::string& out_dir) {
  validate(c);
  const auto grid = expand_grid(c.gains, c.sweep);
  ensure_dir(out_dir);
  const ClassifierModel model = load_model(artifact_path(out_dir, c.paths.model));
  const ControlVector vector = load_vector(artifact_path(out_dir, c.paths.vector));
  check_artifacts(c, model, &vector);

  const auto n = static_cast<std::size_t>(c.n_episodes);
  const std::uint64_t master = stream_seed(c, Stream::Episodes);
  const unsigned threads = effective_threads(c);
  BatchSpec spec = make_spec(c, model, vector);

  SweepReport rep;
  rep.baseline = summarize(run_arm(spec, Arm::Baseline, n, master, threads));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    spec.gains = grid[i];
    SweepRow row;
    row.grid_index = i;
    row.gains = grid[i];
    row.metrics = summarize(run_arm(spec, Arm::Steered, n, master, threads), rep.baseline.mean_tokens);
    row.feasible = row.metrics.solve_rate >= rep.baseline.solve_rate - c.sweep.solve_rate_tolerance;
    rep.rows.push_back(row);
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.feasible != b.feasible) return a.feasible;
    if (a.metrics.mean_tokens != b.metrics.mean_tokens) return a.metrics.mean_tokens < b.metrics.mean_tokens;
    return a.grid_index < b.grid_index;
  });

  std::ostringstream out;
  out << "# steerpid sweep config_hash=" << config_hash(c) << " baseline_mean_tokens=" << fmt_real(rep.baseline.mean_tokens)
      << " baseline_solve_rate=" << fmt_real(rep.baseline.solve_rate) << '\n';
  out << "rank,grid_index,kp,ki,kd,p_target,feasible,solve_rate,mean_tokens,mean_token_reduction_vs_baseline,"
         "mean_terminal_p_red\n";
  for (std::size_t r = 0; r < rep.rows.size(); ++r) {
    const auto& row = rep.rows[r];
    out << r << ',' << row.grid_index << ',' << fmt_real(row.gains.kp) << ',' << fmt_real(row.gains.ki) << ','
        << fmt_real(row.gains.kd) << ',' << fmt_real(row.gains.p_target) << ',' << (row.feasible ? 1 : 0) << ','
        << fmt_real(row.metrics.solve_rate) << ',' << fmt_real(row.metrics.mean_tokens) << ','
        << fmt_real(row.metrics.mean_token_reduction_vs_baseline) << ',' << fmt_real(row.metrics.mean_terminal_p_red)
        << '\n';
  }
  rep.path = artifact_path(out_dir, "sweep.csv");
  io::write_file(rep.path, out.str());
  return rep;
}

struct ReplayReport {
  EpisodeResult result;
  std::optional<std::size_t> saturation_step;
  std::string text;  // human-readable report, also printed by the CLI
};

inline ReplayReport cmd_replay(const HarnessConfig& c, const std::string& out_dir, const std::string& trace_path) {
  validate(c);
  const Trace trace = read_trace(trace_path);
  const ClassifierModel model = load_model(artifact_path(out_dir, c.paths.model));
  const ControlVector vector = load_vector(artifact_path(out_dir, c.paths.vector));
  detail::require(trace.header.dim == model.dim(), "replay: trace dimension does not match classifier");
  detail::require(vector.dim() == model.dim(), "replay: control vector dimension does not match classifier");

  ReplayReport rep;
  rep.result = replay_trace(trace.records, model, vector, c.gains, c.schedule, trace.header.chunk_size);
  rep.saturation_step = saturation_step(rep.result, c.gains.alpha_max);
  const auto& r = rep.result;

  std::ostringstream out;
  out << "chunk,token,alpha,p_red,updated\n";
  for (std::size_t k = 0; k < r.chunks(); ++k) {
    out << k << ',' << r.chunk_end_tokens[k] << ',' << fmt_real(r.alpha_trace[k]) << ',' << fmt_real(r.p_red_trace[k])
        << ',' << (r.pid_traces[k] ? 1 : 0) << '\n';
  }
  out << "# chunks=" << r.chunks() << " tokens=" << r.tokens_used
      << " final_alpha=" << fmt_real(r.alpha_trace.empty() ? 0.0 : r.alpha_trace.back()) << " saturation_step="
      << (rep.saturation_step ? std::to_string(*rep.saturation_step) : std::string("none")) << '\n';
  rep.text = out.str();

  ensure_dir(out_dir);
  io::write_file(artifact_path(out_dir, "replay_alpha.csv"), two_column("alpha", r.chunk_end_tokens, r.alpha_trace));
  io::write_file(artifact_path(out_dir, "replay_p_red.csv"), two_column("p_red", r.chunk_end_tokens, r.p_red_trace));
  return rep;
}

/// Side-by-side table of the two summaries in `out_dir`. Refuses to pair
/// summaries produced under different configurations.
inline std::string cmd_report(const std::string& out_dir) {
  auto load = [&](const char* arm) {
    const std::string p = artifact_path(out_dir, std::string("summary_") + arm + ".json");
    try {
      return nlohmann::json::parse(io::read_file(p));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(p + ": malformed JSON: " + e.what());
    }
  };
  const auto base = load("baseline");
  const auto steer = load("steered");
  try {
    const auto hb = base.at("config_hash").get<std::string>();
    const auto hs = steer.at("config_hash").get<std::string>();
    detail::require(hb == hs, "report: summaries come from different configurations (" + hb + " vs " + hs + ")");
    const auto& mb = base.at("metrics");
    const auto& ms = steer.at("metrics");
    auto num = [](const nlohmann::json& m, const char* k) {
      return m.at(k).is_null() ? std::string("n/a") : fmt_real(m.at(k).get<double>());
    };
    std::ostringstream out;
    out << "| arm | solve_rate | mean_tokens | token_reduction | mean_terminal_p_red | config_hash |\n"
        << "|---|---|---|---|---|---|\n"
        << "| baseline | " << num(mb, "solve_rate") << " | " << num(mb, "mean_tokens") << " | "
        << num(mb, "mean_token_reduction_vs_baseline") << " | " << num(mb, "mean_terminal_p_red") << " | " << hb
        << " |\n"
        << "| steered | " << num(ms, "solve_rate") << " | " << num(ms, "mean_tokens") << " | "
        << num(ms, "mean_token_reduction_vs_baseline") << " | " << num(ms, "mean_terminal_p_red") << " | " << hs
        << " |\n";
    const std::string text = out.str();
    io::write_file(artifact_path(out_dir, "report.md"), text);
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: malformed summary: ") + e.what());
  }
}

}  // namespace steerpid
