#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgqn/background.hpp"
#include "sgqn/config.hpp"
#include "sgqn/rng.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn {

struct StepResult {
  Tensor<float> obs;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;
};

namespace env_detail {

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  a -= M_PI;  // now in [-pi, pi)
  if (a == -M_PI) a = M_PI;
  return a;
}

// Anti-aliased disc with ~1px feathered rim. Coverage goes through
// `cov` so callers can build the exact foreground mask.
inline void draw_disc(Tensor<float>& frame, Tensor<float>& cov, float cx, float cy,
                      float radius, const float color[3]) {
  const int S = frame.dim(1);
  const int x0 = std::max(0, int(std::floor(cx - radius - 1.f)));
  const int x1 = std::min(S - 1, int(std::ceil(cx + radius + 1.f)));
  const int y0 = std::max(0, int(std::floor(cy - radius - 1.f)));
  const int y1 = std::min(S - 1, int(std::ceil(cy + radius + 1.f)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const float dx = (float(x) + 0.5f) - cx;
      const float dy = (float(y) + 0.5f) - cy;
      const float d = std::sqrt(dx * dx + dy * dy);
      const float a = std::clamp(radius - d + 0.5f, 0.f, 1.f);
      if (a <= 0.f) continue;
      const int idx = y * S + x;
      for (int c = 0; c < 3; ++c) {
        float* ch = frame.ptr() + int64_t(c) * S * S;
        ch[idx] = (1.f - a) * ch[idx] + a * color[c];
      }
      cov[idx] = std::max(cov[idx], a);
    }
}

// Capsule (thick segment) for the pendulum rod.
inline void draw_capsule(Tensor<float>& frame, Tensor<float>& cov, float ax, float ay,
                         float bx, float by, float halfw, const float color[3]) {
  const int S = frame.dim(1);
  const float pad = halfw + 1.f;
  const int x0 = std::max(0, int(std::floor(std::min(ax, bx) - pad)));
  const int x1 = std::min(S - 1, int(std::ceil(std::max(ax, bx) + pad)));
  const int y0 = std::max(0, int(std::floor(std::min(ay, by) - pad)));
  const int y1 = std::min(S - 1, int(std::ceil(std::max(ay, by) + pad)));
  const float ex = bx - ax, ey = by - ay;
  const float len2 = ex * ex + ey * ey;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const float px = (float(x) + 0.5f) - ax;
      const float py = (float(y) + 0.5f) - ay;
      float t = len2 > 0.f ? (px * ex + py * ey) / len2 : 0.f;
      t = std::clamp(t, 0.f, 1.f);
      const float dx = px - t * ex, dy = py - t * ey;
      const float d = std::sqrt(dx * dx + dy * dy);
      const float a = std::clamp(halfw - d + 0.5f, 0.f, 1.f);
      if (a <= 0.f) continue;
      const int idx = y * S + x;
      for (int c = 0; c < 3; ++c) {
        float* ch = frame.ptr() + int64_t(c) * S * S;
        ch[idx] = (1.f - a) * ch[idx] + a * color[c];
      }
      cov[idx] = std::max(cov[idx], a);
    }
}

// Soft darkening ellipse; decoration, not foreground.
inline void draw_shadow(Tensor<float>& frame, float cx, float cy, float rx, float ry) {
  const int S = frame.dim(1);
  const int x0 = std::max(0, int(std::floor(cx - rx - 1.f)));
  const int x1 = std::min(S - 1, int(std::ceil(cx + rx + 1.f)));
  const int y0 = std::max(0, int(std::floor(cy - ry - 1.f)));
  const int y1 = std::min(S - 1, int(std::ceil(cy + ry + 1.f)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const float dx = ((float(x) + 0.5f) - cx) / rx;
      const float dy = ((float(y) + 0.5f) - cy) / ry;
      const float d = std::sqrt(dx * dx + dy * dy);
      const float a = std::clamp((1.f - d) * 3.f, 0.f, 1.f);
      if (a <= 0.f) continue;
      const float mfac = 1.f - 0.45f * a;
      const int idx = y * S + x;
      for (int c = 0; c < 3; ++c) {
        float* ch = frame.ptr() + int64_t(c) * S * S;
        ch[idx] *= mfac;
      }
    }
}

}  // namespace env_detail

// Pixel-control environment with frame stacking and action repeat built
// in. Two systems are provided:
//
//   point_reach     position <- clip(position + 0.05*action, [0,1]^2),
//                   reward -dist(+1 inside radius 0.05) per inner step
//   pendulum_swing  rigid pendulum, angle 0 = upright, g=10 m=1 l=1
//                   dt=0.05 max-torque 2, omega clipped to [-8,8],
//                   reward cos(angle) - 0.001*torque^2 per inner step
//
// Neither system has terminal states: done is always false and episodes
// end by truncation after episode_length/action_repeat decisions.
//
// Rendering composites the suite backdrop, a ground band along the bottom
// (train_plain and test_easy only), a soft shadow under the agent (same
// two suites), then the anti-aliased foreground sprites. test_hard keeps
// the sprites but replaces everything else with held-out animated texture.
// Pixel values are quantized to k/255 so 8-bit replay storage is exact.
class Environment {
 public:
  Environment(const ExperimentConfig& cfg, SuiteKind suite,
              const BackgroundLibrary* lib = nullptr)
      : cfg_(cfg), suite_(suite), lib_(lib), size_(cfg.image_size) {
    if (cfg.env_id == "point_reach") kind_ = Kind::point;
    else if (cfg.env_id == "pendulum_swing") kind_ = Kind::pendulum;
    else throw std::invalid_argument("unknown env_id '" + cfg.env_id + "'");
    max_decisions_ = (cfg.episode_length + cfg.action_repeat - 1) / cfg.action_repeat;
    if (max_decisions_ < 1) max_decisions_ = 1;
  }

  int action_dim() const { return kind_ == Kind::point ? 2 : 1; }
  std::vector<int> obs_shape() const { return {cfg_.frame_stack * 3, size_, size_}; }
  SuiteKind suite() const { return suite_; }
  int decision_budget() const { return max_decisions_; }
  int decisions_taken() const { return decisions_; }

  Tensor<float> reset(uint64_t seed) {
    Rng rng(hash_seed(seed, 0x9E7B0417A11CE5EDULL));
    if (kind_ == Kind::point) {
      px_ = rng.uniform(0.05, 0.95);
      py_ = rng.uniform(0.05, 0.95);
      gx_ = rng.uniform(0.1, 0.9);
      gy_ = rng.uniform(0.1, 0.9);
    } else {
      theta_ = rng.uniform(-M_PI, M_PI);
      theta_ = env_detail::wrap_angle(theta_);
      omega_ = rng.uniform(-1.0, 1.0);
    }
    decisions_ = 0;
    phase_ = 0;
    backdrop_ = Backdrop(suite_, seed, size_, lib_);
    was_reset_ = true;
    render_current();
    frames_.clear();
    for (int i = 0; i < cfg_.frame_stack; ++i) frames_.push_back(frame_);
    return stack_frames();
  }

  StepResult step(const std::vector<double>& action) {
    if (!was_reset_) throw std::logic_error("Environment::step before reset");
    if (int(action.size()) != action_dim())
      throw std::invalid_argument("action dimension mismatch: got " +
                                  std::to_string(action.size()) + ", expected " +
                                  std::to_string(action_dim()));
    std::vector<double> a(action);
    for (double& v : a) v = std::clamp(v, -1.0, 1.0);

    double total_reward = 0.0;
    for (int rep = 0; rep < cfg_.action_repeat; ++rep) {
      total_reward += physics_step(a);
      ++phase_;
    }
    render_current();
    frames_.pop_front();
    frames_.push_back(frame_);
    ++decisions_;

    StepResult r;
    r.obs = stack_frames();
    r.reward = total_reward;
    r.done = false;
    r.truncated = decisions_ >= max_decisions_;
    return r;
  }

  // Last rendered raw frame, [3,S,S].
  const Tensor<float>& render_frame() const {
    if (!was_reset_) throw std::logic_error("Environment::render_frame before reset");
    return frame_;
  }

  // Diagnostics: per-pixel sprite coverage of the last frame and the
  // derived boolean mask. Never shown to the agent.
  const Tensor<float>& foreground_coverage() const { return coverage_; }
  Tensor<uint8_t> foreground_mask() const {
    Tensor<uint8_t> m({size_, size_});
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = coverage_[i] > 0.5f ? 1 : 0;
    return m;
  }

  // Physical state, for tests and diagnostics.
  std::vector<double> physical_state() const {
    if (kind_ == Kind::point) return {px_, py_, gx_, gy_};
    return {theta_, omega_};
  }
  void set_physical_state(const std::vector<double>& s) {
    if (kind_ == Kind::point) {
      if (s.size() != 4) throw std::invalid_argument("point state is [px,py,gx,gy]");
      px_ = s[0]; py_ = s[1]; gx_ = s[2]; gy_ = s[3];
    } else {
      if (s.size() != 2) throw std::invalid_argument("pendulum state is [theta,omega]");
      theta_ = s[0]; omega_ = s[1];
    }
    if (was_reset_) render_current();
  }

 private:
  enum class Kind { point, pendulum };

  double physics_step(const std::vector<double>& a) {
    if (kind_ == Kind::point) {
      px_ = std::clamp(px_ + 0.05 * a[0], 0.0, 1.0);
      py_ = std::clamp(py_ + 0.05 * a[1], 0.0, 1.0);
      const double dist = std::hypot(px_ - gx_, py_ - gy_);
      return -dist + (dist <= 0.05 ? 1.0 : 0.0);
    }
    const double g = 10.0, m = 1.0, l = 1.0, dt = 0.05;
    const double torque = 2.0 * a[0];
    omega_ += (3.0 * g / (2.0 * l) * std::sin(theta_) + 3.0 / (m * l * l) * torque) * dt;
    omega_ = std::clamp(omega_, -8.0, 8.0);
    theta_ = env_detail::wrap_angle(theta_ + omega_ * dt);
    return std::cos(theta_) - 0.001 * torque * torque;
  }

  void render_current() {
    using namespace env_detail;
    if (frame_.numel() == 0) {
      frame_ = Tensor<float>({3, size_, size_});
      coverage_ = Tensor<float>({size_, size_});
    }
    backdrop_.fill(phase_, frame_);
    coverage_.fill(0.f);

    const float S = float(size_);
    const int band_top = int(std::floor(0.88f * S));
    const bool decorated = suite_ != SuiteKind::test_hard;
    if (decorated) {
      const float band_color[3] = {0.32f, 0.30f, 0.24f};
      for (int c = 0; c < 3; ++c) {
        float* ch = frame_.ptr() + int64_t(c) * size_ * size_;
        for (int y = band_top; y < size_; ++y)
          std::fill_n(ch + int64_t(y) * size_, size_, band_color[c]);
      }
    }

    if (kind_ == Kind::point) {
      const float margin = 0.1f * S;
      const float ax = margin + float(px_) * (S - 2.f * margin);
      const float ay = margin + float(py_) * (float(band_top) - 2.f * margin);
      const float tx = margin + float(gx_) * (S - 2.f * margin);
      const float ty = margin + float(gy_) * (float(band_top) - 2.f * margin);
      if (decorated)
        draw_shadow(frame_, ax, float(band_top) + 0.05f * S, 0.07f * S, 0.022f * S);
      const float goal_color[3] = {0.10f, 0.85f, 0.25f};
      const float agent_color[3] = {0.92f, 0.20f, 0.10f};
      draw_disc(frame_, coverage_, tx, ty, 0.07f * S, goal_color);
      draw_disc(frame_, coverage_, ax, ay, 0.055f * S, agent_color);
    } else {
      const float pivot_x = 0.5f * S, pivot_y = 0.42f * S;
      const float rod_len = 0.30f * S;
      const float bob_x = pivot_x + rod_len * float(std::sin(theta_));
      const float bob_y = pivot_y - rod_len * float(std::cos(theta_));
      if (decorated)
        draw_shadow(frame_, bob_x, float(band_top) + 0.05f * S, 0.08f * S, 0.022f * S);
      const float rod_color[3] = {0.78f, 0.78f, 0.85f};
      const float bob_color[3] = {0.92f, 0.20f, 0.10f};
      const float pivot_color[3] = {0.55f, 0.55f, 0.60f};
      draw_capsule(frame_, coverage_, pivot_x, pivot_y, bob_x, bob_y, 0.018f * S, rod_color);
      draw_disc(frame_, coverage_, bob_x, bob_y, 0.05f * S, bob_color);
      draw_disc(frame_, coverage_, pivot_x, pivot_y, 0.022f * S, pivot_color);
    }

    for (int64_t i = 0; i < frame_.numel(); ++i) {
      float v = std::clamp(frame_[i], 0.f, 1.f);
      frame_[i] = float(std::lround(v * 255.f)) / 255.f;
    }
  }

  Tensor<float> stack_frames() const {
    Tensor<float> obs({cfg_.frame_stack * 3, size_, size_});
    const int64_t plane = int64_t(3) * size_ * size_;
    for (int i = 0; i < cfg_.frame_stack; ++i)
      std::copy_n(frames_[i].ptr(), plane, obs.ptr() + i * plane);
    return obs;
  }

  ExperimentConfig cfg_;
  SuiteKind suite_;
  const BackgroundLibrary* lib_;
  int size_;
  Kind kind_;
  int max_decisions_ = 1;

  double px_ = 0.5, py_ = 0.5, gx_ = 0.5, gy_ = 0.5;
  double theta_ = 0.0, omega_ = 0.0;
  int decisions_ = 0;
  int phase_ = 0;
  bool was_reset_ = false;
  Backdrop backdrop_{SuiteKind::train_plain, 0, 1};
  Tensor<float> frame_;
  Tensor<float> coverage_;
  std::deque<Tensor<float>> frames_;
};

inline Environment make_env(const ExperimentConfig& cfg, SuiteKind suite,
                            const BackgroundLibrary* lib = nullptr) {
  return Environment(cfg, suite, lib);
}

}  // namespace sgqn
