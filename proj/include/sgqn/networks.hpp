#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgqn/autodiff.hpp"
#include "sgqn/config.hpp"
#include "sgqn/rng.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn {

// Named parameter tensors with a stable creation order. The order is the
// contract shared by graph wrapping, the optimizer, Polyak updates, and
// checkpoints.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  size_t add(std::string name, Tensor<T> t) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
    return tensors.size() - 1;
  }
  size_t size() const { return tensors.size(); }
  Tensor<T>& operator[](size_t i) { return tensors[i]; }
  const Tensor<T>& operator[](size_t i) const { return tensors[i]; }

  size_t index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw std::invalid_argument("ParamStore: no parameter named '" + name + "'");
  }
};

// Spatial plan of the convolutional encoder and its mirrored decoder.
// Valid image sizes satisfy size % 8 == 4 and size >= 12: the first
// stride-2 layer then lands on an odd width, each stride-1 3x3 layer
// shrinks it by 2 down to exactly size/4, and two 2x upsamplings take
// size/4 back to size. At 84 this gives the 11-layer stack with the
// 84 -> 41 -> 39 -> ... -> 21 trace.
struct EncoderPlan {
  int image_size = 0;
  int conv1_out = 0;
  int latent = 0;       // final spatial side, size/4
  int conv_layers = 0;  // including the stride-2 layer

  static EncoderPlan make(int image_size) {
    if (image_size < 12 || image_size % 8 != 4)
      throw std::invalid_argument(
          "image_size " + std::to_string(image_size) +
          " unsupported: must be >= 12 with remainder 4 when divided by 8");
    EncoderPlan p;
    p.image_size = image_size;
    p.conv1_out = (image_size - 3) / 2 + 1;
    p.latent = image_size / 4;
    p.conv_layers = 1 + (p.conv1_out - p.latent) / 2;
    return p;
  }
};

// How the action joins the critic trunk; recorded in checkpoints so the
// wiring of a saved agent is never ambiguous.
inline constexpr const char* kActionEntry = "concat_after_norm_tanh";

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kInitTemperature = 0.1;

// The four parameterized functions (encoder, twin critics, actor,
// saliency decoder) plus frozen target copies of encoder and critics.
//
// Layout per critic head: flatten -> linear(100) -> layer norm -> tanh,
// concat action, then linear(1024) -> ReLU -> linear(1024) -> ReLU ->
// linear(1). The actor owns an identical trunk (without the action) and
// emits mean and log-std (clamped to [-10,2]) of a tanh-squashed
// Gaussian. The decoder consumes critic head 1's 100-unit embedding and
// the action: linear -> ReLU -> reshape to (32, size/4, size/4), two
// rounds of [3x3 conv(64, pad 1) -> ReLU -> 2x nearest upsample], and a
// final 3x3 conv (pad 1) with frame_stack*3 filters producing mask
// logits at full image resolution.
template <typename T>
class Networks {
 public:
  Networks(const ExperimentConfig& cfg, int action_dim, uint64_t seed)
      : plan_(EncoderPlan::make(cfg.image_size)),
        channels_(cfg.frame_stack * 3),
        action_dim_(action_dim) {
    if (action_dim <= 0) throw std::invalid_argument("Networks: action_dim must be positive");
    Rng rng(make_stream(seed, Stream::init));

    encoder_ids = add_encoder("encoder", rng);
    q1_ids = add_critic_head("q1", rng);
    q2_ids = add_critic_head("q2", rng);
    actor_ids = add_actor(rng);
    decoder_ids = add_decoder(rng);
    log_temp_id = store.add("log_temp",
                            Tensor<T>::scalar(T(std::log(kInitTemperature))));

    target_encoder_ids = clone_group("target_encoder", "encoder", encoder_ids);
    target_q1_ids = clone_group("target_q1", "q1", q1_ids);
    target_q2_ids = clone_group("target_q2", "q2", q2_ids);
  }

  const EncoderPlan& plan() const { return plan_; }
  int channels() const { return channels_; }
  int action_dim() const { return action_dim_; }
  int flat_features() const { return 32 * plan_.latent * plan_.latent; }

  // ----- graph wrapping -------------------------------------------------

  // One leaf per stored tensor, in store order. Training graphs mark the
  // groups they optimize; everything else participates as a constant.
  std::vector<ad::Var<T>> wrap(const std::vector<bool>& trainable) const {
    if (trainable.size() != store.size())
      throw std::invalid_argument("Networks::wrap: mask size mismatch");
    std::vector<ad::Var<T>> vars;
    vars.reserve(store.size());
    for (size_t i = 0; i < store.size(); ++i)
      vars.push_back(ad::leaf(Tensor<T>(store[i]), trainable[i]));
    return vars;
  }

  std::vector<bool> no_grads() const { return std::vector<bool>(store.size(), false); }

  std::vector<bool> mark(std::initializer_list<const std::vector<size_t>*> groups,
                         bool include_log_temp = false) const {
    std::vector<bool> m(store.size(), false);
    for (const auto* g : groups)
      for (size_t i : *g) m[i] = true;
    if (include_log_temp) m[log_temp_id] = true;
    return m;
  }

  // ----- forward graphs ---------------------------------------------------

  ad::Var<T> encode(const std::vector<ad::Var<T>>& P, const ad::Var<T>& obs,
                    bool target = false, bool guided = false) const {
    if (obs->value.ndim() != 4 || obs->value.dim(1) != channels_ ||
        obs->value.dim(2) != plan_.image_size || obs->value.dim(3) != plan_.image_size)
      throw std::invalid_argument("encode: expected [B," + std::to_string(channels_) + "," +
                                  std::to_string(plan_.image_size) + "," +
                                  std::to_string(plan_.image_size) + "], got " +
                                  shape_str(obs->value.shape));
    const auto& ids = target ? target_encoder_ids : encoder_ids;
    ad::Var<T> x = obs;
    for (int l = 0; l < plan_.conv_layers; ++l) {
      const int stride = l == 0 ? 2 : 1;
      x = ad::conv2d(x, P[ids[2 * l]], P[ids[2 * l + 1]], stride, 0);
      x = ad::relu(x, guided);
    }
    return x;
  }

  // 100-unit post-tanh embedding of one critic trunk.
  ad::Var<T> head_embed(const std::vector<ad::Var<T>>& P, const ad::Var<T>& feats, int head,
                        bool target = false) const {
    const auto& ids = head_ids(head, target);
    auto flat = ad::flatten_batch(feats);
    auto h = ad::linear(flat, P[ids[0]], P[ids[1]]);
    h = ad::layer_norm(h, P[ids[2]], P[ids[3]]);
    return ad::tanh_op(h);
  }

  ad::Var<T> q_from_embed(const std::vector<ad::Var<T>>& P, const ad::Var<T>& embed,
                          const ad::Var<T>& action, int head, bool target = false,
                          bool guided = false) const {
    const auto& ids = head_ids(head, target);
    auto h = ad::concat_cols(embed, action);
    h = ad::relu(ad::linear(h, P[ids[4]], P[ids[5]]), guided);
    h = ad::relu(ad::linear(h, P[ids[6]], P[ids[7]]), guided);
    return ad::linear(h, P[ids[8]], P[ids[9]]);  // [B,1]
  }

  ad::Var<T> q_head(const std::vector<ad::Var<T>>& P, const ad::Var<T>& feats,
                    const ad::Var<T>& action, int head, bool target = false,
                    bool guided = false) const {
    return q_from_embed(P, head_embed(P, feats, head, target), action, head, target, guided);
  }

  std::pair<ad::Var<T>, ad::Var<T>> q_pair(const std::vector<ad::Var<T>>& P,
                                           const ad::Var<T>& feats, const ad::Var<T>& action,
                                           bool target = false) const {
    return {q_head(P, feats, action, 1, target), q_head(P, feats, action, 2, target)};
  }

  // Actor trunk and heads: returns (mean, clamped log-std), each [B,d].
  std::pair<ad::Var<T>, ad::Var<T>> actor_head(const std::vector<ad::Var<T>>& P,
                                               const ad::Var<T>& feats) const {
    auto flat = ad::flatten_batch(feats);
    auto h = ad::linear(flat, P[actor_ids[0]], P[actor_ids[1]]);
    h = ad::layer_norm(h, P[actor_ids[2]], P[actor_ids[3]]);
    h = ad::tanh_op(h);
    h = ad::relu(ad::linear(h, P[actor_ids[4]], P[actor_ids[5]]));
    h = ad::relu(ad::linear(h, P[actor_ids[6]], P[actor_ids[7]]));
    auto out = ad::linear(h, P[actor_ids[8]], P[actor_ids[9]]);  // [B,2d]
    auto mean = ad::slice_cols(out, 0, action_dim_);
    auto log_std = ad::clamp_op(ad::slice_cols(out, action_dim_, action_dim_), T(kLogStdMin),
                                T(kLogStdMax));
    return {mean, log_std};
  }

  // Saliency logits from critic head 1's embedding and the action.
  ad::Var<T> decode(const std::vector<ad::Var<T>>& P, const ad::Var<T>& embed,
                    const ad::Var<T>& action) const {
    auto h = ad::concat_cols(embed, action);
    h = ad::relu(ad::linear(h, P[decoder_ids[0]], P[decoder_ids[1]]));
    auto x = ad::reshape(h, {h->value.dim(0), 32, plan_.latent, plan_.latent});
    x = ad::upsample2(ad::relu(ad::conv2d(x, P[decoder_ids[2]], P[decoder_ids[3]], 1, 1)));
    x = ad::upsample2(ad::relu(ad::conv2d(x, P[decoder_ids[4]], P[decoder_ids[5]], 1, 1)));
    return ad::conv2d(x, P[decoder_ids[6]], P[decoder_ids[7]], 1, 1);
  }

  // ----- value-level helpers --------------------------------------------

  struct ActResult {
    std::vector<double> action;
    double log_prob = 0.0;
  };

  // Single-observation policy query for rollouts; no gradients involved.
  // mode_sample=false returns the squashed mean action.
  ActResult act(const Tensor<T>& obs, bool mode_sample, Rng* rng) const {
    if (mode_sample && rng == nullptr)
      throw std::invalid_argument("act: sampling requires an rng");
    Tensor<T> batched;
    batched.shape = {1, channels_, plan_.image_size, plan_.image_size};
    batched.data = obs.data;
    if (batched.numel() != obs.numel())
      throw std::invalid_argument("act: observation shape mismatch");
    auto P = wrap(no_grads());
    auto obs_var = ad::constant(std::move(batched));
    auto feats = encode(P, obs_var);
    auto [mean, log_std] = actor_head(P, feats);

    ActResult r;
    r.action.resize(action_dim_);
    const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
    for (int i = 0; i < action_dim_; ++i) {
      const double mu = double(mean->value[i]);
      const double ls = double(log_std->value[i]);
      const double eps = mode_sample ? rng->normal() : 0.0;
      const double u = mu + std::exp(ls) * eps;
      r.action[i] = std::tanh(u);
      // log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u))
      const double x = -2.0 * u;
      const double sp =
          x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      const double log_one_minus_a2 = 2.0 * (std::log(2.0) - u - sp);
      r.log_prob += -half_log_2pi - ls - 0.5 * eps * eps - log_one_minus_a2;
    }
    return r;
  }

  // ----- target maintenance ----------------------------------------------

  // target <- (1-m)*target + m*online, elementwise.
  void polyak_update_encoder(double m) { polyak_group(encoder_ids, target_encoder_ids, m); }
  void polyak_update_critics(double m) {
    polyak_group(q1_ids, target_q1_ids, m);
    polyak_group(q2_ids, target_q2_ids, m);
  }

  ParamStore<T> store;
  std::vector<size_t> encoder_ids, q1_ids, q2_ids, actor_ids, decoder_ids;
  std::vector<size_t> target_encoder_ids, target_q1_ids, target_q2_ids;
  size_t log_temp_id = 0;

 private:
  const std::vector<size_t>& head_ids(int head, bool target) const {
    if (head == 1) return target ? target_q1_ids : q1_ids;
    if (head == 2) return target ? target_q2_ids : q2_ids;
    throw std::invalid_argument("critic head must be 1 or 2");
  }

  void polyak_group(const std::vector<size_t>& online, const std::vector<size_t>& target,
                    double m) {
    if (m < 0.0 || m > 1.0) throw std::invalid_argument("polyak_update: m must be in [0,1]");
    for (size_t k = 0; k < online.size(); ++k) {
      Tensor<T>& t = store[target[k]];
      const Tensor<T>& o = store[online[k]];
      for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = T((1.0 - m) * double(t[i]) + m * double(o[i]));
    }
  }

  Tensor<T> fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in, bool zero = false) {
    Tensor<T> t(std::move(shape));
    if (zero) return t;
    const double k = 1.0 / std::sqrt(double(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(-k, k));
    return t;
  }

  std::vector<size_t> add_encoder(const std::string& prefix, Rng& rng) {
    std::vector<size_t> ids;
    int in_ch = channels_;
    for (int l = 0; l < plan_.conv_layers; ++l) {
      const int fan_in = in_ch * 9;
      char name[64];
      std::snprintf(name, sizeof name, "%s.conv%02d", prefix.c_str(), l);
      ids.push_back(store.add(std::string(name) + ".w",
                              fan_in_uniform(rng, {32, in_ch, 3, 3}, fan_in)));
      ids.push_back(store.add(std::string(name) + ".b", fan_in_uniform(rng, {32}, fan_in)));
      in_ch = 32;
    }
    return ids;
  }

  std::vector<size_t> add_critic_head(const std::string& prefix, Rng& rng) {
    std::vector<size_t> ids;
    const int flat = flat_features();
    ids.push_back(store.add(prefix + ".trunk.w", fan_in_uniform(rng, {100, flat}, flat)));
    ids.push_back(store.add(prefix + ".trunk.b", fan_in_uniform(rng, {100}, flat)));
    ids.push_back(store.add(prefix + ".ln.gamma", Tensor<T>::full({100}, T(1))));
    ids.push_back(store.add(prefix + ".ln.beta", Tensor<T>::zeros({100})));
    const int in1 = 100 + action_dim_;
    ids.push_back(store.add(prefix + ".fc1.w", fan_in_uniform(rng, {1024, in1}, in1)));
    ids.push_back(store.add(prefix + ".fc1.b", fan_in_uniform(rng, {1024}, in1)));
    ids.push_back(store.add(prefix + ".fc2.w", fan_in_uniform(rng, {1024, 1024}, 1024)));
    ids.push_back(store.add(prefix + ".fc2.b", fan_in_uniform(rng, {1024}, 1024)));
    ids.push_back(store.add(prefix + ".fc3.w", fan_in_uniform(rng, {1, 1024}, 1024)));
    ids.push_back(store.add(prefix + ".fc3.b", fan_in_uniform(rng, {1}, 1024)));
    return ids;
  }

  std::vector<size_t> add_actor(Rng& rng) {
    std::vector<size_t> ids;
    const int flat = flat_features();
    ids.push_back(store.add("actor.trunk.w", fan_in_uniform(rng, {100, flat}, flat)));
    ids.push_back(store.add("actor.trunk.b", fan_in_uniform(rng, {100}, flat)));
    ids.push_back(store.add("actor.ln.gamma", Tensor<T>::full({100}, T(1))));
    ids.push_back(store.add("actor.ln.beta", Tensor<T>::zeros({100})));
    ids.push_back(store.add("actor.fc1.w", fan_in_uniform(rng, {1024, 100}, 100)));
    ids.push_back(store.add("actor.fc1.b", fan_in_uniform(rng, {1024}, 100)));
    ids.push_back(store.add("actor.fc2.w", fan_in_uniform(rng, {1024, 1024}, 1024)));
    ids.push_back(store.add("actor.fc2.b", fan_in_uniform(rng, {1024}, 1024)));
    ids.push_back(store.add("actor.fc3.w",
                            fan_in_uniform(rng, {2 * action_dim_, 1024}, 1024)));
    ids.push_back(store.add("actor.fc3.b", fan_in_uniform(rng, {2 * action_dim_}, 1024)));
    return ids;
  }

  std::vector<size_t> add_decoder(Rng& rng) {
    std::vector<size_t> ids;
    const int out = 32 * plan_.latent * plan_.latent;
    const int in = 100 + action_dim_;
    ids.push_back(store.add("decoder.fc.w", fan_in_uniform(rng, {out, in}, in)));
    ids.push_back(store.add("decoder.fc.b", fan_in_uniform(rng, {out}, in)));
    ids.push_back(store.add("decoder.conv1.w", fan_in_uniform(rng, {64, 32, 3, 3}, 32 * 9)));
    ids.push_back(store.add("decoder.conv1.b", fan_in_uniform(rng, {64}, 32 * 9)));
    ids.push_back(store.add("decoder.conv2.w", fan_in_uniform(rng, {64, 64, 3, 3}, 64 * 9)));
    ids.push_back(store.add("decoder.conv2.b", fan_in_uniform(rng, {64}, 64 * 9)));
    ids.push_back(store.add("decoder.conv3.w",
                            fan_in_uniform(rng, {channels_, 64, 3, 3}, 64 * 9)));
    ids.push_back(store.add("decoder.conv3.b",
                            fan_in_uniform(rng, {channels_}, 64 * 9, /*zero=*/true)));
    return ids;
  }

  std::vector<size_t> clone_group(const std::string& prefix, const std::string& src_prefix,
                                  const std::vector<size_t>& src) {
    std::vector<size_t> ids;
    for (size_t i : src) {
      std::string name = store.names[i];
      name.replace(0, src_prefix.size(), prefix);
      ids.push_back(store.add(std::move(name), Tensor<T>(store[i])));
    }
    return ids;
  }

  EncoderPlan plan_;
  int channels_;
  int action_dim_;
};

}  // namespace sgqn
