#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgqn/agent.hpp"
#include "sgqn/attribution.hpp"
#include "sgqn/checkpoint.hpp"
#include "sgqn/config.hpp"
#include "sgqn/envpix.hpp"
#include "sgqn/image_io.hpp"
#include "sgqn/plot.hpp"
#include "sgqn/trainer.hpp"

// Zero-shot evaluation across background suites, saliency-panel export,
// ablation orchestration and learning-curve plots.

namespace sgqn {

constexpr int kDefaultEvalEpisodes = 30;

struct SuiteResult {
  SuiteKind suite = SuiteKind::train_plain;
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> episode_returns;
};

struct EvalReport {
  std::string checkpoint;
  uint64_t seed = 0;
  std::vector<SuiteResult> suites;

  const SuiteResult* find(SuiteKind k) const {
    for (const auto& s : suites)
      if (s.suite == k) return &s;
    return nullptr;
  }

  // train_plain mean minus the given test suite's mean.
  double generalization_gap(SuiteKind test) const {
    const SuiteResult* tr = find(SuiteKind::train_plain);
    const SuiteResult* te = find(test);
    if (!tr || !te)
      throw std::invalid_argument("generalization_gap: report lacks " +
                                  to_string(!tr ? SuiteKind::train_plain : test));
    return tr->mean_return - te->mean_return;
  }
};

namespace eval_detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

inline std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

inline std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace eval_detail

// Runs K full episodes with the deterministic mean action. Episode seeds are
// drawn from the eval stream of `seed`, so the same seed replays exactly.
template <typename T>
SuiteResult run_episodes(const Agent<T>& agent, const ExperimentConfig& cfg, SuiteKind suite,
                         int episodes, uint64_t seed, const BackgroundLibrary* lib = nullptr) {
  if (episodes < 1) throw std::invalid_argument("run_episodes: episodes must be >= 1");
  Environment env(cfg, suite, lib);
  Rng rng = make_stream(seed, Stream::eval);
  SuiteResult out;
  out.suite = suite;
  for (int e = 0; e < episodes; ++e) {
    Tensor<float> obs = env.reset(rng.next_u64());
    double ret = 0.0;
    for (;;) {
      const auto a = agent.nets().act(obs, false, nullptr);
      StepResult sr = env.step(a.action);
      ret += sr.reward;
      obs = std::move(sr.obs);
      if (sr.done || sr.truncated) break;
    }
    out.episode_returns.push_back(ret);
  }
  out.mean_return = eval_detail::mean_of(out.episode_returns);
  out.std_return = eval_detail::sample_std(out.episode_returns);
  return out;
}

template <typename T>
EvalReport evaluate_agent(const Agent<T>& agent, SuiteKind suite, int episodes, uint64_t seed,
                          const BackgroundLibrary* lib = nullptr) {
  EvalReport r;
  r.seed = seed;
  r.suites.push_back(run_episodes(agent, agent.config(), suite, episodes, seed, lib));
  return r;
}

template <typename T>
EvalReport evaluate_agent_all(const Agent<T>& agent, int episodes, uint64_t seed,
                              const BackgroundLibrary* lib = nullptr) {
  EvalReport r;
  r.seed = seed;
  for (SuiteKind k : {SuiteKind::train_plain, SuiteKind::test_easy, SuiteKind::test_hard})
    r.suites.push_back(run_episodes(agent, agent.config(), k, episodes, seed, lib));
  return r;
}

// Loads a checkpoint, evaluates one suite and appends a row to eval.csv in
// the checkpoint's directory (or to report_path when given). The checkpoint
// file itself is never written.
inline EvalReport evaluate(const std::string& ckpt_path, SuiteKind suite,
                           int episodes = kDefaultEvalEpisodes, uint64_t seed = 0,
                           const BackgroundLibrary* lib = nullptr,
                           const std::string& report_path = "") {
  Agent<float> agent = load_agent<float>(ckpt_path);
  EvalReport r = evaluate_agent(agent, suite, episodes, seed, lib);
  r.checkpoint = ckpt_path;

  namespace fs = std::filesystem;
  fs::path dir = fs::path(ckpt_path).parent_path();
  if (dir.empty()) dir = ".";
  const fs::path report = report_path.empty() ? dir / "eval.csv" : fs::path(report_path);
  const bool fresh = !fs::exists(report);
  std::ofstream f(report, std::ios::app);
  if (!f) throw std::runtime_error("evaluate: cannot write '" + report.string() + "'");
  if (fresh) f << "checkpoint,suite,seed,episodes,mean_return,std_return\n";
  const SuiteResult& s = r.suites.front();
  char row[256];
  std::snprintf(row, sizeof(row), "%s,%s,%llu,%d,%.10g,%.10g\n",
                fs::path(ckpt_path).filename().string().c_str(), to_string(suite).c_str(),
                static_cast<unsigned long long>(seed), episodes, s.mean_return, s.std_return);
  f << row;
  return r;
}

// ---------------------------------------------------------------------------
// Saliency export
// ---------------------------------------------------------------------------

constexpr int kSaliencyScale = 3;

// All four panels for one state, each [C,H,W]: the observation, the binarized
// attribution of the critic, their product, and the decoder's predicted mask
// (sigmoid thresholded at 0.5). Everything is computed at the same (s,a).
struct SaliencyPanels {
  Tensor<float> observation;
  Tensor<float> attribution_mask;
  Tensor<float> masked;
  Tensor<float> prediction;
};

template <typename T>
SaliencyPanels saliency_panels(const Agent<T>& agent, const Tensor<T>& obs) {
  const ExperimentConfig& cfg = agent.config();
  const auto act = agent.nets().act(obs, false, nullptr);
  const int d = agent.nets().action_dim();
  Tensor<T> a({d});
  for (int k = 0; k < d; ++k) a[k] = T(act.action[size_t(k)]);

  Tensor<T> obs4;
  obs4.shape = {1, obs.dim(0), obs.dim(1), obs.dim(2)};
  obs4.data = obs.data;
  Tensor<T> a2;
  a2.shape = {1, d};
  a2.data = a.data;

  Tensor<T> mask4 = agent.attribution_masks(obs4, a2, cfg.rho, cfg.attribution_method);
  Tensor<T> mask(obs.shape);
  mask.data = mask4.data;

  auto P = agent.nets().wrap(agent.nets().no_grads());
  auto feats = agent.nets().encode(P, ad::constant(Tensor<T>(obs4)));
  auto embed = agent.nets().head_embed(P, feats, 1);
  auto logits = agent.nets().decode(P, embed, ad::constant(Tensor<T>(a2)));
  Tensor<T> pred(obs.shape);
  for (int64_t i = 0; i < pred.numel(); ++i)
    pred[i] = logits->value[i] >= T(0) ? T(1) : T(0);  // sigmoid(x) >= 0.5 iff x >= 0

  SaliencyPanels p;
  p.observation = obs;
  p.attribution_mask = mask;
  p.masked = masked_observation(obs, mask);
  p.prediction = std::move(pred);
  return p;
}

// Intersection-over-union of two binary masks (nonzero counts as one).
// Both empty means a perfect match.
template <typename T>
double mask_iou(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("mask_iou: shape mismatch " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const bool x = a[i] != T(0), y = b[i] != T(0);
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

namespace eval_detail {

// Newest frame of a stacked observation as an RGB image.
inline Tensor<float> last_rgb(const Tensor<float>& t) {
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor<float> out({3, H, W});
  const int64_t plane = int64_t(H) * W;
  std::copy_n(t.ptr() + int64_t(C - 3) * plane, 3 * plane, out.ptr());
  return out;
}

inline Tensor<float> nearest_upscale(const Tensor<float>& img, int k) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> out({C, H * k, W * k});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H * k; ++y)
      for (int x = 0; x < W * k; ++x)
        out[(int64_t(c) * H * k + y) * (W * k) + x] = img[(int64_t(c) * H + y / k) * W + x / k];
  return out;
}

// Panels side by side with a 2px white gutter, scaled for legibility.
inline Tensor<float> compose_grid(const std::vector<Tensor<float>>& panels, int scale) {
  const int gap = 2;
  const int H = panels[0].dim(1), W = panels[0].dim(2);
  const int n = int(panels.size());
  Tensor<float> grid({3, H, n * W + (n - 1) * gap});
  grid.fill(1.0f);
  const int gw = grid.dim(2);
  for (int p = 0; p < n; ++p)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          grid[(int64_t(c) * H + y) * gw + p * (W + gap) + x] =
              panels[size_t(p)][(int64_t(c) * H + y) * W + x];
  return nearest_upscale(grid, scale);
}

// Deterministic stream of evaluation states: mean-action rollouts on the
// given suite, capturing one observation every few decisions.
template <typename T>
std::vector<Tensor<float>> collect_states(const Agent<T>& agent, SuiteKind suite, int n,
                                          uint64_t seed, const BackgroundLibrary* lib,
                                          int stride = 5) {
  if (n < 1) throw std::invalid_argument("collect_states: n must be >= 1");
  Environment env(agent.config(), suite, lib);
  Rng rng = make_stream(seed, Stream::eval);
  std::vector<Tensor<float>> states;
  Tensor<float> obs = env.reset(rng.next_u64());
  bool episode_over = false;
  while (int(states.size()) < n) {
    if (episode_over) {
      obs = env.reset(rng.next_u64());
      episode_over = false;
    }
    states.push_back(obs);
    for (int j = 0; j < stride && !episode_over; ++j) {
      const auto a = agent.nets().act(obs, false, nullptr);
      StepResult sr = env.step(a.action);
      obs = std::move(sr.obs);
      episode_over = sr.done || sr.truncated;
    }
  }
  return states;
}

}  // namespace eval_detail

// Writes one 4-panel PNG per sampled state into out_dir and returns the
// paths: observation, attribution mask, masked observation, predicted mask,
// all for the same state and mean action, newest frame shown.
inline std::vector<std::string> export_saliency(const std::string& ckpt_path, SuiteKind suite,
                                                int n, const std::string& out_dir,
                                                uint64_t seed = 0,
                                                const BackgroundLibrary* lib = nullptr) {
  Agent<float> agent = load_agent<float>(ckpt_path);
  std::filesystem::create_directories(out_dir);
  const auto states = eval_detail::collect_states(agent, suite, n, seed, lib);
  std::vector<std::string> paths;
  for (int i = 0; i < n; ++i) {
    const SaliencyPanels p = saliency_panels(agent, states[size_t(i)]);
    const Tensor<float> grid = eval_detail::compose_grid(
        {eval_detail::last_rgb(p.observation), eval_detail::last_rgb(p.attribution_mask),
         eval_detail::last_rgb(p.masked), eval_detail::last_rgb(p.prediction)},
        kSaliencyScale);
    char name[64];
    std::snprintf(name, sizeof(name), "saliency_%03d.png", i);
    const std::string path = out_dir + "/" + name;
    write_png_rgb(path, grid);
    paths.push_back(path);
  }
  return paths;
}

// Mean Gini coefficient of |attribution| over states collected from a suite.
// Higher means the critic's evidence concentrates on fewer pixels.
template <typename T>
double mean_attribution_gini(const Agent<T>& agent, SuiteKind suite, int n_states, uint64_t seed,
                             const BackgroundLibrary* lib = nullptr) {
  const auto states = eval_detail::collect_states(agent, suite, n_states, seed, lib);
  double acc = 0.0;
  for (const auto& s : states) {
    const auto act = agent.nets().act(s, false, nullptr);
    Tensor<T> a({agent.nets().action_dim()});
    for (int k = 0; k < a.dim(0); ++k) a[k] = T(act.action[size_t(k)]);
    Tensor<T> g = guided_backprop(agent.nets(), s, a);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = std::abs(g[i]);
    acc += gini_coefficient(g);
  }
  return acc / double(n_states);
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationResult {
  struct Run {
    Variant variant = Variant::sac;
    uint64_t seed = 0;
    std::string run_dir;
    bool ok = false;
    std::string error;
    std::vector<SuiteResult> suites;

    const SuiteResult* find(SuiteKind k) const {
      for (const auto& s : suites)
        if (s.suite == k) return &s;
      return nullptr;
    }
  };

  std::vector<Run> runs;
  std::string table_path;
  std::string runs_path;

  std::vector<double> seed_means(Variant v, SuiteKind k) const {
    std::vector<double> out;
    for (const auto& r : runs)
      if (r.ok && r.variant == v)
        if (const SuiteResult* s = r.find(k)) out.push_back(s->mean_return);
    return out;
  }

  // Across-seed mean of per-seed mean returns; NaN when every run failed.
  double mean_return(Variant v, SuiteKind k) const {
    const auto m = seed_means(v, k);
    return m.empty() ? std::numeric_limits<double>::quiet_NaN() : eval_detail::mean_of(m);
  }
};

// Trains every variant for every seed, evaluates each final checkpoint on
// all three suites and writes two CSVs under out_root: runs.csv (one row per
// run and suite) and ablation.csv (per-variant summary with percent change
// against sac). A failed run is recorded and the rest still complete.
inline AblationResult run_ablation(const ExperimentConfig& base, const std::vector<uint64_t>& seeds,
                                   const std::string& out_root,
                                   int episodes = kDefaultEvalEpisodes,
                                   const BackgroundLibrary* lib = nullptr) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: need at least one seed");
  namespace fs = std::filesystem;
  fs::create_directories(out_root);

  static constexpr Variant kOrder[] = {Variant::sac, Variant::sac_consistency, Variant::sac_ssl,
                                       Variant::sgqn};
  AblationResult res;
  for (Variant v : kOrder)
    for (uint64_t seed : seeds) {
      AblationResult::Run run;
      run.variant = v;
      run.seed = seed;
      run.run_dir = out_root + "/" + to_string(v) + "_seed" + std::to_string(seed);
      try {
        ExperimentConfig cfg = base;
        cfg.variant = v;
        cfg.seed = seed;
        train(cfg, run.run_dir, lib);
        Agent<float> agent = load_agent<float>(run.run_dir + "/ckpt_final.bin");
        run.suites = evaluate_agent_all(agent, episodes, seed, lib).suites;
        run.ok = true;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      res.runs.push_back(std::move(run));
    }

  res.runs_path = out_root + "/runs.csv";
  {
    std::ofstream f(res.runs_path);
    if (!f) throw std::runtime_error("run_ablation: cannot write '" + res.runs_path + "'");
    f << "variant,seed,suite,mean_return,std_return,status,run_dir\n";
    for (const auto& r : res.runs) {
      if (!r.ok) {
        f << to_string(r.variant) << "," << r.seed << ",,,,failed: "
          << eval_detail::csv_safe(r.error) << "," << r.run_dir << "\n";
        continue;
      }
      for (const auto& s : r.suites) {
        char row[256];
        std::snprintf(row, sizeof(row), "%s,%llu,%s,%.10g,%.10g,ok,",
                      to_string(r.variant).c_str(), static_cast<unsigned long long>(r.seed),
                      to_string(s.suite).c_str(), s.mean_return, s.std_return);
        f << row << r.run_dir << "\n";
      }
    }
  }

  res.table_path = out_root + "/ablation.csv";
  {
    std::ofstream f(res.table_path);
    if (!f) throw std::runtime_error("run_ablation: cannot write '" + res.table_path + "'");
    f << "variant,suite,mean_return,std_return,pct_vs_sac,seeds_ok,seeds_failed\n";
    for (Variant v : kOrder) {
      int failed = 0;
      for (const auto& r : res.runs)
        if (r.variant == v && !r.ok) ++failed;
      for (SuiteKind k :
           {SuiteKind::train_plain, SuiteKind::test_easy, SuiteKind::test_hard}) {
        const auto means = res.seed_means(v, k);
        const double m = res.mean_return(v, k);
        const double sd = eval_detail::sample_std(means);
        const double base_m = res.mean_return(Variant::sac, k);
        double pct = std::numeric_limits<double>::quiet_NaN();
        if (v == Variant::sac) pct = 0.0;
        else if (std::isfinite(m) && std::isfinite(base_m) && base_m != 0.0)
          pct = 100.0 * (m - base_m) / std::abs(base_m);
        char row[256];
        std::snprintf(row, sizeof(row), "%s,%s,%.10g,%.10g,%.10g,%d,%d\n",
                      to_string(v).c_str(), to_string(k).c_str(), m, sd, pct,
                      int(means.size()), failed);
        f << row;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Learning-curve plots
// ---------------------------------------------------------------------------

namespace eval_detail {

struct RunCurve {
  std::string env_id;
  std::string variant;
  std::vector<double> steps;
  std::vector<double> returns;
};

inline RunCurve read_run_curve(const std::string& run_dir) {
  RunCurve rc;
  const ExperimentConfig cfg = parse_config_text(slurp(run_dir + "/config.txt"), {});
  rc.env_id = cfg.env_id;
  rc.variant = to_string(cfg.variant);

  const std::string path = run_dir + "/metrics.csv";
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("plot_curves: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line.rfind("step,episode_return_train", 0) != 0)
    throw std::invalid_argument("plot_curves: unexpected metrics schema in '" + path + "'");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const size_t c1 = line.find(',');
    const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::invalid_argument("plot_curves: malformed row in '" + path + "'");
    rc.steps.push_back(std::stod(line.substr(0, c1)));
    rc.returns.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
  }
  if (rc.steps.empty())
    throw std::invalid_argument("plot_curves: no data rows in '" + path + "'");
  return rc;
}

inline plot::Color variant_color(const std::string& v) {
  if (v == "sac") return {0.12f, 0.47f, 0.71f};
  if (v == "sac_consistency") return {1.0f, 0.50f, 0.05f};
  if (v == "sac_ssl") return {0.17f, 0.63f, 0.17f};
  if (v == "sgqn") return {0.84f, 0.15f, 0.16f};
  return {0.4f, 0.4f, 0.4f};
}

}  // namespace eval_detail

// Aggregates metrics.csv files into one figure per environment: pointwise
// mean return per variant over the steps all its runs share, with a min/max
// band once a variant has two or more runs. Returns the written paths.
inline std::vector<std::string> plot_curves(const std::vector<std::string>& run_dirs,
                                            const std::string& out_path) {
  if (run_dirs.empty()) throw std::invalid_argument("plot_curves: no run directories");
  std::map<std::string, std::map<std::string, std::vector<eval_detail::RunCurve>>> by_env;
  for (const auto& dir : run_dirs) {
    eval_detail::RunCurve rc = eval_detail::read_run_curve(dir);
    by_env[rc.env_id][rc.variant].push_back(std::move(rc));
  }

  std::vector<std::string> written;
  for (const auto& [env, variants] : by_env) {
    std::vector<plot::Series> series;
    for (const auto& [variant, curves] : variants) {
      std::map<double, std::vector<double>> at_step;
      for (const auto& rc : curves)
        for (size_t i = 0; i < rc.steps.size(); ++i)
          at_step[rc.steps[i]].push_back(rc.returns[i]);
      plot::Series s;
      s.label = variant;
      s.color = eval_detail::variant_color(variant);
      s.band = curves.size() >= 2;
      for (const auto& [step, vals] : at_step) {
        if (vals.size() != curves.size()) continue;  // step missing from some run
        s.x.push_back(step);
        s.mean.push_back(eval_detail::mean_of(vals));
        s.lo.push_back(*std::min_element(vals.begin(), vals.end()));
        s.hi.push_back(*std::max_element(vals.begin(), vals.end()));
      }
      if (s.x.empty())
        throw std::invalid_argument("plot_curves: runs of variant '" + variant +
                                    "' share no steps");
      series.push_back(std::move(s));
    }

    std::string path = out_path;
    if (by_env.size() > 1) {
      const size_t dot = path.rfind('.');
      if (dot == std::string::npos) path += "_" + env + ".png";
      else path = path.substr(0, dot) + "_" + env + path.substr(dot);
    }
    plot::render_plot(series, env, "env steps", "return", path);
    written.push_back(path);
  }
  return written;
}

}  // namespace sgqn
