// steerpid: command-line front end for the offline phase (gen-data,
// train-classifier, extract-vector) and the simulated online evaluation
// (simulate, sweep, replay, report).
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steerpid/steerpid.hpp"

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

steerpid::HarnessConfig load(const GlobalOptions& g) {
  steerpid::HarnessConfig c = g.config_path.empty() ? steerpid::default_config() : steerpid::load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::string out_dir(const GlobalOptions& g, const steerpid::HarnessConfig& c) {
  return steerpid::resolve_out_dir(c, g.out_dir.empty() ? std::nullopt : std::optional<std::string>(g.out_dir));
}

void print_metrics(const char* arm, const steerpid::RunMetrics& m) {
  std::cout << arm << ": episodes=" << m.episodes << " solve_rate=" << steerpid::fmt_real(m.solve_rate)
            << " mean_tokens=" << steerpid::fmt_real(m.mean_tokens)
            << " token_reduction=" << steerpid::fmt_real(m.mean_token_reduction_vs_baseline)
            << " mean_terminal_p_red=" << steerpid::fmt_real(m.mean_terminal_p_red) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive PID-modulated activation steering: offline phase and simulated evaluation"};
  app.require_subcommand(1);

  GlobalOptions g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "Harness configuration file (JSON)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the master seed");
  app.add_option("--out", g.out_dir,
                 std::string("Output directory (overrides ") + steerpid::kOutDirEnv + " and paths.out_dir)");

  auto* gen = app.add_subcommand("gen-data", "Write labeled training and held-out chunk sets from the unsteered plant");
  std::optional<int> n_train;
  gen->add_option("--n-train-chunks", n_train, "Override n_train_chunks");

  auto* trn = app.add_subcommand("train-classifier", "Train the redundancy classifier on the data set");
  auto* ext = app.add_subcommand("extract-vector", "Compute the control vector from the data set");

  auto* sim = app.add_subcommand("simulate", "Run steered and/or baseline episodes on matched seeds");
  bool steered = false, baseline = false;
  std::optional<int> n_episodes;
  std::vector<std::size_t> record;
  sim->add_flag("--steered", steered, "Run the steered arm");
  sim->add_flag("--baseline", baseline, "Run the baseline arm");
  sim->add_option("--episodes", n_episodes, "Override n_episodes");
  sim->add_option("--record-episode", record, "Write a replayable trace for this episode index (repeatable)");

  auto* swp = app.add_subcommand("sweep", "Grid search over kp, ki, kd and p_target");
  std::vector<double> g_kp, g_ki, g_kd, g_pt;
  swp->add_option("--kp", g_kp, "Comma-separated kp values")->delimiter(',');
  swp->add_option("--ki", g_ki, "Comma-separated ki values")->delimiter(',');
  swp->add_option("--kd", g_kd, "Comma-separated kd values")->delimiter(',');
  swp->add_option("--p-target", g_pt, "Comma-separated p_target values")->delimiter(',');
  swp->add_option("--episodes", n_episodes, "Override n_episodes");

  auto* rep = app.add_subcommand("replay", "Replay a recorded trace through the controller (open loop)");
  std::string trace_path;
  rep->add_option("--trace", trace_path, "Trace file (JSON Lines)")->required();

  auto* rpt = app.add_subcommand("report", "Compare baseline and steered summaries in the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (rpt->parsed()) {
      const steerpid::HarnessConfig c = load(g);
      std::cout << steerpid::cmd_report(out_dir(g, c));
      return 0;
    }

    steerpid::HarnessConfig c = load(g);
    if (n_train) c.n_train_chunks = *n_train;
    if (n_episodes) c.n_episodes = *n_episodes;
    steerpid::validate(c);
    const std::string dir = out_dir(g, c);

    if (gen->parsed()) {
      const auto r = steerpid::cmd_gen_data(c, dir);
      std::cout << "wrote " << r.dataset_path << " (" << c.n_train_chunks << " chunks: " << r.n_required
                << " required, " << r.n_redundant << " redundant)\n"
                << "wrote " << r.heldout_path << '\n';
    } else if (trn->parsed()) {
      const auto r = steerpid::cmd_train_classifier(c, dir);
      std::cout << "final_loss=" << steerpid::fmt_real(r.final_loss)
                << " train_accuracy=" << steerpid::fmt_real(r.train_accuracy.value_or(NAN))
                << " heldout_accuracy=" << steerpid::fmt_real(r.heldout_accuracy.value_or(NAN)) << '\n'
                << "wrote " << steerpid::artifact_path(dir, c.paths.model) << '\n';
    } else if (ext->parsed()) {
      const auto r = steerpid::cmd_extract_vector(c, dir);
      std::cout << "n_required=" << r.vector.n_required << " n_redundant=" << r.vector.n_redundant
                << " norm=" << steerpid::fmt_real(steerpid::norm(r.vector.direction))
                << " cosine_to_true_gap=" << steerpid::fmt_real(r.cosine_to_true_gap) << '\n'
                << "wrote " << steerpid::artifact_path(dir, c.paths.vector) << '\n';
    } else if (sim->parsed()) {
      steerpid::SimulateOptions opt;
      opt.steered = steered || !baseline;
      opt.baseline = baseline || !steered;
      opt.record_episodes = record;
      const auto r = steerpid::cmd_simulate(c, dir, opt);
      if (opt.baseline) print_metrics("baseline", r.baseline);
      if (r.steered) print_metrics("steered", *r.steered);
      for (const auto& p : r.written) std::cout << "wrote " << p << '\n';
    } else if (swp->parsed()) {
      if (!g_kp.empty()) c.sweep.kp = g_kp;
      if (!g_ki.empty()) c.sweep.ki = g_ki;
      if (!g_kd.empty()) c.sweep.kd = g_kd;
      if (!g_pt.empty()) c.sweep.p_target = g_pt;
      const auto r = steerpid::cmd_sweep(c, dir);
      std::cout << steerpid::io::read_file(r.path) << "wrote " << r.path << '\n';
    } else if (rep->parsed()) {
      const auto r = steerpid::cmd_replay(c, dir, trace_path);
      std::cout << r.text;
    }
    return 0;
  } catch (const steerpid::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
}
