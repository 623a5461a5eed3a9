// Runs the offline phase in memory and one matched-seed batch on the
// simulated plant, then prints a baseline vs steered comparison and the
// controller trajectory of the first steered episode.

#include <cstdio>
#include <cstdlib>

#include "steerpid/steerpid.hpp"

int main(int argc, char** argv) {
  using namespace steerpid;
  HarnessConfig cfg = default_config();
  if (argc > 1) cfg.n_episodes = std::atoi(argv[1]);

  const OfflineArtifacts art = build_offline_artifacts(cfg);
  const BatchSpec spec = make_spec(cfg, art.model, art.vector);
  const BatchResult r = run_batch(spec, static_cast<std::size_t>(cfg.n_episodes), stream_seed(cfg, Stream::Episodes));

  std::printf("%-10s %10s %12s %10s\n", "arm", "solve_rate", "mean_tokens", "reduction");
  std::printf("%-10s %10.3f %12.1f %10.3f\n", "baseline", r.baseline.solve_rate, r.baseline.mean_tokens, 0.0);
  std::printf("%-10s %10.3f %12.1f %10.3f\n", "steered", r.steered.solve_rate, r.steered.mean_tokens,
              r.steered.mean_token_reduction_vs_baseline);

  const EpisodeResult& e = r.steered_episodes.front();
  std::printf("\nepisode 0 (steered): %d tokens, %s\n", e.tokens_used, e.solved ? "solved" : "unsolved");
  for (std::size_t k = 0; k < e.chunks() && k < 8; ++k) {
    std::printf("  chunk %zu  tokens<=%4d  p_red=%.3f  alpha=%.5f%s\n", k, e.chunk_end_tokens[k], e.p_red_trace[k],
                e.alpha_trace[k], e.pid_traces[k] ? "  (update)" : "");
  }
  return 0;
}
