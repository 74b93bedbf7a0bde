#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sgqn/rng.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn {

// Minibatch of transitions in dense layout, observations dequantized back
// to [0,1] floats.
template <typename T>
struct Batch {
  Tensor<T> obs;       // [n, C, H, W]
  Tensor<T> actions;   // [n, d]
  Tensor<T> rewards;   // [n]
  Tensor<T> dones;     // [n], 1 on environment termination only
  Tensor<T> next_obs;  // [n, C, H, W]
};

// Fixed-capacity FIFO transition store with uniform sampling. Observations
// are held as 8-bit quantized pixels; slots allocate lazily so a large
// configured capacity costs nothing until filled.
template <typename T = float>
class ReplayBuffer {
 public:
  ReplayBuffer(std::vector<int> obs_shape, int action_dim, size_t capacity)
      : obs_shape_(std::move(obs_shape)), action_dim_(action_dim),
        capacity_(capacity) {
    if (obs_shape_.size() != 3)
      throw std::invalid_argument("ReplayBuffer: obs_shape must be [C,H,W]");
    if (action_dim_ <= 0)
      throw std::invalid_argument("ReplayBuffer: action_dim must be positive");
    if (capacity_ == 0)
      throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    obs_numel_ = 1;
    for (int d : obs_shape_) {
      if (d <= 0)
        throw std::invalid_argument("ReplayBuffer: obs_shape must be positive");
      obs_numel_ *= size_t(d);
    }
    slots_.resize(capacity_);
  }

  size_t size() const { return size_; }
  size_t capacity() const { return capacity_; }
  const std::vector<int>& obs_shape() const { return obs_shape_; }
  int action_dim() const { return action_dim_; }

  // done must be true only on environment termination, never on time-limit
  // truncation, so the bootstrap term survives truncated episodes.
  void push(const Tensor<T>& s, const std::vector<double>& a, double r,
            const Tensor<T>& s_next, bool done) {
    check_obs(s, "s");
    check_obs(s_next, "s_next");
    if (int(a.size()) != action_dim_)
      throw std::invalid_argument(
          "ReplayBuffer::push: action has " + std::to_string(a.size()) +
          " entries, expected " + std::to_string(action_dim_));
    if (!std::isfinite(r))
      throw std::invalid_argument("ReplayBuffer::push: reward is not finite");

    Slot& slot = slots_[cursor_];
    quantize(s, slot.obs);
    quantize(s_next, slot.next_obs);
    slot.action.assign(a.begin(), a.end());
    slot.reward = r;
    slot.done = done;

    cursor_ = (cursor_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
  }

  // Uniform with replacement; index draws come from the caller's stream in
  // sample order, so a fixed rng state reproduces the batch exactly.
  Batch<T> sample(int n, Rng& rng) const {
    if (n <= 0)
      throw std::invalid_argument("ReplayBuffer::sample: n must be positive");
    if (size_t(n) > size_)
      throw std::invalid_argument(
          "ReplayBuffer::sample: requested " + std::to_string(n) +
          " transitions but buffer holds " + std::to_string(size_));

    Batch<T> b;
    std::vector<int> full_shape = {n};
    full_shape.insert(full_shape.end(), obs_shape_.begin(), obs_shape_.end());
    b.obs = Tensor<T>(full_shape);
    b.next_obs = Tensor<T>(full_shape);
    b.actions = Tensor<T>({n, action_dim_});
    b.rewards = Tensor<T>({n});
    b.dones = Tensor<T>({n});

    for (int i = 0; i < n; ++i) {
      const size_t idx = size_t(rng.uniform_int(0, int64_t(size_) - 1));
      const Slot& slot = slots_[idx];
      dequantize(slot.obs, b.obs.data.data() + size_t(i) * obs_numel_);
      dequantize(slot.next_obs,
                 b.next_obs.data.data() + size_t(i) * obs_numel_);
      for (int k = 0; k < action_dim_; ++k)
        b.actions.data[size_t(i) * action_dim_ + k] = T(slot.action[k]);
      b.rewards.data[i] = T(slot.reward);
      b.dones.data[i] = slot.done ? T(1) : T(0);
    }
    return b;
  }

 private:
  struct Slot {
    std::vector<uint8_t> obs;
    std::vector<uint8_t> next_obs;
    std::vector<double> action;
    double reward = 0.0;
    bool done = false;
  };

  void check_obs(const Tensor<T>& t, const char* name) const {
    if (t.shape != obs_shape_)
      throw std::invalid_argument(std::string("ReplayBuffer::push: ") + name +
                                  " has shape " + shape_str(t.shape) +
                                  ", expected " + shape_str(obs_shape_));
  }

  void quantize(const Tensor<T>& src, std::vector<uint8_t>& dst) const {
    dst.resize(obs_numel_);
    for (size_t i = 0; i < obs_numel_; ++i) {
      const double v = std::clamp(double(src.data[i]), 0.0, 1.0);
      dst[i] = uint8_t(std::lround(v * 255.0));
    }
  }

  void dequantize(const std::vector<uint8_t>& src, T* dst) const {
    for (size_t i = 0; i < obs_numel_; ++i) dst[i] = T(src[i]) / T(255);
  }

  std::vector<int> obs_shape_;
  int action_dim_;
  size_t capacity_;
  size_t obs_numel_ = 0;
  std::vector<Slot> slots_;
  size_t cursor_ = 0;
  size_t size_ = 0;
};

}  // namespace sgqn
