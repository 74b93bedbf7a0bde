#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgqn/agent.hpp"
#include "sgqn/checkpoint.hpp"
#include "sgqn/config.hpp"
#include "sgqn/envpix.hpp"
#include "sgqn/replay.hpp"
#include "sgqn/rng.hpp"

namespace sgqn {

struct TrainResult {
  std::string run_dir;
  int64_t env_steps = 0;
  int64_t train_steps = 0;
  double last_episode_return = 0.0;
};

// Owns the interaction loop: warmup with random actions until the buffer
// holds 10 batches, then one train step per agent decision. Raw pre-repeat
// frames are the step unit for the budget, metrics cadence (500) and
// checkpoint cadence (10000). Deterministic given the config seed.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, std::string run_dir,
          const BackgroundLibrary* lib = nullptr)
      : cfg_(cfg), run_dir_(std::move(run_dir)), lib_(lib),
        env_(cfg, SuiteKind::train_plain, lib), agent_(cfg, env_.action_dim()),
        buffer_(env_.obs_shape(), env_.action_dim(), size_t(cfg.replay_capacity)),
        env_rng_(make_stream(cfg.seed, Stream::env)),
        actor_rng_(make_stream(cfg.seed, Stream::actor)),
        replay_rng_(make_stream(cfg.seed, Stream::replay)),
        augment_rng_(make_stream(cfg.seed, Stream::augment)),
        warmup_rng_(make_stream(cfg.seed, Stream::warmup)) {}

  Agent<float>& agent() { return agent_; }
  Environment& env() { return env_; }
  ReplayBuffer<float>& buffer() { return buffer_; }
  const LossReport& last_report() const { return last_report_; }

  TrainResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(run_dir_);
    try {
      return run_inner();
    } catch (const std::exception& e) {
      std::ofstream err(run_dir_ + "/error.txt");
      err << e.what() << "\n";
      throw;
    }
  }

 private:
  TrainResult run_inner() {
    save_config(cfg_, run_dir_ + "/config.txt");
    std::ofstream metrics(run_dir_ + "/metrics.csv");
    if (!metrics)
      throw std::runtime_error("train: cannot write metrics in '" + run_dir_ +
                               "'");
    metrics << "step,episode_return_train,l_q,l_c,l_actor,l_temp,l_ssl,"
               "mask_fraction,temperature\n";

    const int d = env_.action_dim();
    const size_t warmup_target = size_t(cfg_.batch_size) * 10;
    Tensor<float> obs = env_.reset(env_rng_.next_u64());
    double episode_return = 0.0;
    double last_episode_return = 0.0;
    int64_t env_steps = 0;
    int64_t train_steps = 0;

    while (env_steps < int64_t(cfg_.total_env_steps)) {
      const bool warming = buffer_.size() < warmup_target;
      std::vector<double> action(size_t(d), 0.0);
      if (warming) {
        for (double& a : action) a = warmup_rng_.uniform(-1.0, 1.0);
      } else {
        action = agent_.nets().act(obs, true, &actor_rng_).action;
      }

      const StepResult sr = env_.step(action);
      buffer_.push(obs, action, sr.reward, sr.obs, sr.done);
      episode_return += sr.reward;
      obs = sr.obs;

      const int64_t prev_steps = env_steps;
      env_steps += cfg_.action_repeat;

      if (!warming) {
        last_report_ = agent_.train_step(buffer_, replay_rng_, actor_rng_,
                                         augment_rng_, train_steps, lib_);
        ++train_steps;
      }

      if (sr.truncated || sr.done) {
        last_episode_return = episode_return;
        episode_return = 0.0;
        obs = env_.reset(env_rng_.next_u64());
      }

      if (crossed(prev_steps, env_steps, 500))
        write_metrics_row(metrics, env_steps, last_episode_return);
      if (crossed(prev_steps, env_steps, 10000))
        save_agent(agent_, run_dir_ + "/ckpt_" + std::to_string(env_steps) +
                               ".bin",
                   counters(env_steps, train_steps));
    }

    save_agent(agent_, run_dir_ + "/ckpt_final.bin",
               counters(env_steps, train_steps));
    TrainResult r;
    r.run_dir = run_dir_;
    r.env_steps = env_steps;
    r.train_steps = train_steps;
    r.last_episode_return = last_episode_return;
    return r;
  }

  static bool crossed(int64_t prev, int64_t cur, int64_t every) {
    return cur / every > prev / every;
  }

  std::vector<std::pair<std::string, std::string>> counters(
      int64_t env_steps, int64_t train_steps) const {
    return {{"env_steps", std::to_string(env_steps)},
            {"train_steps", std::to_string(train_steps)}};
  }

  void write_metrics_row(std::ofstream& os, int64_t step,
                         double episode_return) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  static_cast<long long>(step), episode_return,
                  last_report_.l_q, last_report_.l_c, last_report_.l_actor,
                  last_report_.l_temp, last_report_.l_ssl,
                  last_report_.mask_fraction, agent_.temperature());
    os << buf;
  }

  ExperimentConfig cfg_;
  std::string run_dir_;
  const BackgroundLibrary* lib_;
  Environment env_;
  Agent<float> agent_;
  ReplayBuffer<float> buffer_;
  Rng env_rng_, actor_rng_, replay_rng_, augment_rng_, warmup_rng_;
  LossReport last_report_;
};

// Runs a full training job into `run_dir`. The directory ends up holding
// config.txt, metrics.csv and periodic + final checkpoints; a failure
// leaves error.txt behind and rethrows.
inline TrainResult train(const ExperimentConfig& cfg,
                         const std::string& run_dir,
                         const BackgroundLibrary* lib = nullptr) {
  Trainer t(cfg, run_dir, lib);
  return t.run();
}

}  // namespace sgqn
