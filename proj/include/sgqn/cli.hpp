#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgqn/background.hpp"
#include "sgqn/config.hpp"
#include "sgqn/eval.hpp"
#include "sgqn/trainer.hpp"

// Command-line front end. run_cli is the whole program so tests can drive it
// in process; tools/sgqn_main.cpp just forwards argc/argv.

namespace sgqn {

namespace cli_detail {

// Config file (optional) + --seed + trailing key=value overrides, with the
// trailing overrides winning.
inline ExperimentConfig make_config(const std::string& config_path, bool seed_given,
                                    uint64_t seed, std::vector<std::string> overrides) {
  if (seed_given) overrides.insert(overrides.begin(), "seed=" + std::to_string(seed));
  if (config_path.empty()) return parse_config_text("", overrides);
  return load_config(config_path, overrides);
}

inline std::string default_run_dir(const ExperimentConfig& cfg) {
  return "runs/" + cfg.env_id + "_" + to_string(cfg.variant) + "_seed" +
         std::to_string(cfg.seed);
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"saliency-guided soft actor-critic toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, suite = "train_plain", background_dir;
  uint64_t seed = 0;
  int episodes = kDefaultEvalEpisodes;
  int n_states = 4;
  std::vector<std::string> overrides;
  std::vector<uint64_t> seeds;
  std::vector<std::string> run_dirs;

  auto* tr = app.add_subcommand("train", "train one agent and write a run directory");
  tr->add_option("--config", config_path, "config file (key = value lines)");
  auto* tr_seed = tr->add_option("--seed", seed, "training seed");
  tr->add_option("--out", out, "run directory (default runs/<env>_<variant>_seed<seed>)");
  tr->add_option("--background-dir", background_dir, "directory of distractor PNGs");
  tr->add_option("overrides", overrides, "trailing key=value config overrides");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one background suite");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--suite", suite, "train_plain | test_easy | test_hard");
  ev->add_option("--episodes", episodes, "episodes per evaluation");
  ev->add_option("--seed", seed, "evaluation seed");
  ev->add_option("--out", out, "report csv (default eval.csv beside the checkpoint)");
  ev->add_option("--background-dir", background_dir, "directory of distractor PNGs");

  auto* sa = app.add_subcommand("saliency", "export 4-panel saliency PNGs for a checkpoint");
  sa->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sa->add_option("--suite", suite, "suite to sample states from");
  sa->add_option("--n", n_states, "number of states")->check(CLI::PositiveNumber);
  sa->add_option("--out", out, "output directory (default saliency_out)");
  sa->add_option("--seed", seed, "state-sampling seed");
  sa->add_option("--background-dir", background_dir, "directory of distractor PNGs");

  auto* ab = app.add_subcommand("ablate", "train all variants across seeds and tabulate");
  ab->add_option("--config", config_path, "config file shared by every run");
  ab->add_option("--seeds", seeds, "training seeds")->delimiter(',');
  ab->add_option("--out", out, "output root (default ablation_out)");
  ab->add_option("--episodes", episodes, "episodes per evaluation");
  ab->add_option("--background-dir", background_dir, "directory of distractor PNGs");
  ab->add_option("overrides", overrides, "trailing key=value config overrides");

  auto* pl = app.add_subcommand("plot", "render learning curves from run directories");
  pl->add_option("--runs", run_dirs, "run directories with metrics.csv")->required();
  pl->add_option("--out", out, "output png (default curves.png)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::printf("%s", app.help().c_str());
    return 0;
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n%s", e.what(), app.help().c_str());
    return 2;
  }

  try {
    if (tr->parsed()) {
      const ExperimentConfig cfg =
          cli_detail::make_config(config_path, tr_seed->count() > 0, seed, overrides);
      BackgroundLibrary lib;
      const bool has_lib = !background_dir.empty();
      if (has_lib) lib = BackgroundLibrary::load_dir(background_dir, cfg.image_size);
      const std::string run_dir = out.empty() ? cli_detail::default_run_dir(cfg) : out;
      const TrainResult r = train(cfg, run_dir, has_lib ? &lib : nullptr);
      std::printf("run_dir=%s env_steps=%lld train_steps=%lld last_return=%.6g\n",
                  r.run_dir.c_str(), static_cast<long long>(r.env_steps),
                  static_cast<long long>(r.train_steps), r.last_episode_return);
    } else if (ev->parsed()) {
      const SuiteKind k = suite_from_string(suite);
      BackgroundLibrary lib;
      const BackgroundLibrary* libp = nullptr;
      if (!background_dir.empty()) {
        const Agent<float> probe = load_agent<float>(checkpoint);
        lib = BackgroundLibrary::load_dir(background_dir, probe.config().image_size);
        libp = &lib;
      }
      const EvalReport r = evaluate(checkpoint, k, episodes, seed, libp, out);
      const SuiteResult& s = r.suites.front();
      std::printf("suite=%s episodes=%d seed=%llu mean_return=%.6g std_return=%.6g\n",
                  to_string(k).c_str(), episodes, static_cast<unsigned long long>(seed),
                  s.mean_return, s.std_return);
    } else if (sa->parsed()) {
      const SuiteKind k = suite_from_string(suite);
      BackgroundLibrary lib;
      const BackgroundLibrary* libp = nullptr;
      if (!background_dir.empty()) {
        const Agent<float> probe = load_agent<float>(checkpoint);
        lib = BackgroundLibrary::load_dir(background_dir, probe.config().image_size);
        libp = &lib;
      }
      const std::string dir = out.empty() ? "saliency_out" : out;
      const auto paths = export_saliency(checkpoint, k, n_states, dir, seed, libp);
      for (const auto& p : paths) std::printf("%s\n", p.c_str());
    } else if (ab->parsed()) {
      if (seeds.empty()) seeds = {0, 1, 2};
      const ExperimentConfig cfg = cli_detail::make_config(config_path, false, 0, overrides);
      BackgroundLibrary lib;
      const bool has_lib = !background_dir.empty();
      if (has_lib) lib = BackgroundLibrary::load_dir(background_dir, cfg.image_size);
      const std::string root = out.empty() ? "ablation_out" : out;
      const AblationResult r =
          run_ablation(cfg, seeds, root, episodes, has_lib ? &lib : nullptr);
      int failed = 0;
      for (const auto& run : r.runs) failed += !run.ok;
      std::printf("table=%s runs=%s failed=%d\n", r.table_path.c_str(), r.runs_path.c_str(),
                  failed);
      if (failed > 0) return 1;
    } else if (pl->parsed()) {
      const std::string path = out.empty() ? "curves.png" : out;
      for (const auto& p : plot_curves(run_dirs, path)) std::printf("%s\n", p.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace sgqn
