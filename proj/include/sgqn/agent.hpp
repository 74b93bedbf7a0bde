#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgqn/attribution.hpp"
#include "sgqn/augment.hpp"
#include "sgqn/autodiff.hpp"
#include "sgqn/config.hpp"
#include "sgqn/networks.hpp"
#include "sgqn/optim.hpp"
#include "sgqn/replay.hpp"
#include "sgqn/rng.hpp"

namespace sgqn {

inline bool variant_uses_consistency(Variant v) {
  return v == Variant::sac_consistency || v == Variant::sgqn;
}

inline bool variant_uses_ssl(Variant v) {
  return v == Variant::sac_ssl || v == Variant::sgqn;
}

struct LossReport {
  double l_q = 0.0;
  double l_c = 0.0;
  double l_actor = 0.0;
  double l_temp = 0.0;
  double l_ssl = 0.0;
  double mask_fraction = 0.0;
  double mean_abs_q = 0.0;
  double grad_norm_critic = 0.0;
  double grad_norm_actor = 0.0;
  double grad_norm_ssl = 0.0;
  double temperature = 0.0;

  bool all_finite() const {
    for (double v : {l_q, l_c, l_actor, l_temp, l_ssl, mask_fraction,
                     mean_abs_q, grad_norm_critic, grad_norm_actor,
                     grad_norm_ssl, temperature})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Losses and the interleaved update schedule for every ablation variant.
//
// RNG discipline (load-bearing for the plain-SAC reduction): per train step
// the replay stream yields batch_size index draws, and the actor stream
// yields batch-size-by-action-dim normal draws twice, sample-major — first
// for a' in the critic target, then for the reparameterized actor update.
// The augment stream is consumed only inside the self-supervised phase, so
// variants without it replay the exact draw sequence of plain SAC.
template <typename T = float>
class Agent {
 public:
  Agent(const ExperimentConfig& cfg, int action_dim)
      : cfg_(cfg), nets_(cfg, action_dim, cfg.seed),
        opt_critic_(cfg.lr_main), opt_actor_(cfg.lr_main),
        opt_temp_(cfg.lr_temp, 0.5, 0.999), opt_ssl_(cfg.lr_ssl) {
    std::vector<size_t> critic_ids = nets_.encoder_ids;
    critic_ids.insert(critic_ids.end(), nets_.q1_ids.begin(),
                      nets_.q1_ids.end());
    critic_ids.insert(critic_ids.end(), nets_.q2_ids.begin(),
                      nets_.q2_ids.end());
    opt_critic_.attach(nets_.store, critic_ids);
    opt_actor_.attach(nets_.store, nets_.actor_ids);
    opt_temp_.attach(nets_.store, {nets_.log_temp_id});

    std::vector<size_t> ssl_ids = nets_.encoder_ids;
    ssl_ids.insert(ssl_ids.end(), nets_.decoder_ids.begin(),
                   nets_.decoder_ids.end());
    opt_ssl_.attach(nets_.store, ssl_ids);

    mark_critic_ = nets_.mark({&nets_.encoder_ids, &nets_.q1_ids, &nets_.q2_ids});
    mark_actor_ = nets_.mark({&nets_.actor_ids});
    mark_temp_ = nets_.mark({}, true);
    mark_ssl_ = nets_.mark({&nets_.encoder_ids, &nets_.decoder_ids});
  }

  const ExperimentConfig& config() const { return cfg_; }
  Networks<T>& nets() { return nets_; }
  const Networks<T>& nets() const { return nets_; }
  int action_dim() const { return nets_.action_dim(); }
  double temperature() const {
    return std::exp(double(nets_.store[nets_.log_temp_id][0]));
  }
  double target_entropy() const { return -double(nets_.action_dim()); }

  Adam<T>& opt_critic() { return opt_critic_; }
  Adam<T>& opt_actor() { return opt_actor_; }
  Adam<T>& opt_temp() { return opt_temp_; }
  Adam<T>& opt_ssl() { return opt_ssl_; }
  const Adam<T>& opt_critic() const { return opt_critic_; }
  const Adam<T>& opt_actor() const { return opt_actor_; }
  const Adam<T>& opt_temp() const { return opt_temp_; }
  const Adam<T>& opt_ssl() const { return opt_ssl_; }

  // Study flag: detach the unmasked branch of the consistency loss.
  bool stop_grad_unmasked = false;

  // ----- policy sampling (value level, no gradients) -----------------------

  struct PolicySample {
    Tensor<T> actions;    // [B, d]
    Tensor<T> log_probs;  // [B]
  };

  // Draws eps sample-major from `rng` (one normal per action entry) and
  // squashes through tanh; log-probs include the tanh change of variables.
  PolicySample sample_policy(const Tensor<T>& obs_batch, Rng& rng) const {
    auto P = nets_.wrap(nets_.no_grads());
    auto feats = nets_.encode(P, ad::constant(Tensor<T>(obs_batch)));
    auto [mean, log_std] = nets_.actor_head(P, feats);

    const int b = obs_batch.dim(0);
    const int d = nets_.action_dim();
    PolicySample out;
    out.actions = Tensor<T>({b, d});
    out.log_probs = Tensor<T>({b});
    const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
    for (int i = 0; i < b; ++i) {
      double lp = 0.0;
      for (int k = 0; k < d; ++k) {
        const double mu = double(mean->value[i * d + k]);
        const double ls = double(log_std->value[i * d + k]);
        const double eps = rng.normal();
        const double u = mu + std::exp(ls) * eps;
        out.actions[i * d + k] = T(std::tanh(u));
        const double x = -2.0 * u;
        const double sp =
            x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        lp += -half_log_2pi - ls - 0.5 * eps * eps -
              2.0 * (std::log(2.0) - u - sp);
      }
      out.log_probs[i] = T(lp);
    }
    return out;
  }

  // ----- critic target ------------------------------------------------------

  // y = r + gamma*(1-done)*(min(Q_t1,Q_t2)(s',a') - temperature*log pi(a'|s'))
  // with a' sampled from the online actor on online features and the target
  // encoder/critics providing the bootstrap value. No gradients are tracked.
  Tensor<T> critic_target(const Batch<T>& batch, Rng& actor_rng) const {
    PolicySample next = sample_policy(batch.next_obs, actor_rng);

    auto P = nets_.wrap(nets_.no_grads());
    auto feats_t =
        nets_.encode(P, ad::constant(Tensor<T>(batch.next_obs)), true);
    auto a_next = ad::constant(Tensor<T>(next.actions));
    auto q1t = nets_.q_head(P, feats_t, a_next, 1, true);
    auto q2t = nets_.q_head(P, feats_t, a_next, 2, true);

    const int b = batch.obs.dim(0);
    const double temp = temperature();
    Tensor<T> y({b});
    for (int i = 0; i < b; ++i) {
      const double minq =
          std::min(double(q1t->value[i]), double(q2t->value[i]));
      const double soft = minq - temp * double(next.log_probs[i]);
      y[i] = T(double(batch.rewards[i]) +
               cfg_.discount * (1.0 - double(batch.dones[i])) * soft);
    }
    if (!y.all_finite())
      throw std::runtime_error("critic_target: non-finite target");
    return y;
  }

  // ----- attribution masks --------------------------------------------------

  // Detached per-sample binary masks of the head-1 critic on clean
  // observations, per the configured attribution method.
  Tensor<T> attribution_masks(const Tensor<T>& obs_batch,
                              const Tensor<T>& actions, double rho,
                              AttributionMethod method) const {
    const Tensor<T> maps =
        method == AttributionMethod::guided_backprop
            ? guided_backprop(nets_, obs_batch, actions, CriticHead::one)
            : vanilla_grad(nets_, obs_batch, actions, CriticHead::one);
    return binarize_quantile_batch(maps, rho);
  }

  // ----- critic update ------------------------------------------------------

  struct CriticStep {
    double l_q = 0.0;
    double l_c = 0.0;
    double mask_fraction = 0.0;
    double mean_abs_q = 0.0;
    double grad_norm = 0.0;
  };

  // One gradient step on L_Q + lambda*L_C over encoder and both critic
  // heads. The consistency masks are constants; gradients flow through both
  // the clean and the masked Q evaluations unless stop_grad_unmasked is set.
  CriticStep critic_update(const Batch<T>& batch, const Tensor<T>& y) {
    const int b = batch.obs.dim(0);
    const double lambda =
        variant_uses_consistency(cfg_.variant) ? cfg_.lambda_consistency : 0.0;

    Tensor<T> masks;
    if (lambda != 0.0)
      masks = attribution_masks(batch.obs, batch.actions, cfg_.rho,
                                cfg_.attribution_method);

    auto P = nets_.wrap(mark_critic_);
    auto obs = ad::constant(Tensor<T>(batch.obs));
    auto act = ad::constant(Tensor<T>(batch.actions));
    auto feats = nets_.encode(P, obs);
    auto [q1, q2] = nets_.q_pair(P, feats, act);

    Tensor<T> y_col;
    y_col.shape = {b, 1};
    y_col.data = y.data;
    auto yv = ad::constant(std::move(y_col));
    auto l_q = ad::add(ad::mean_all(ad::square(ad::sub(q1, yv))),
                       ad::mean_all(ad::square(ad::sub(q2, yv))));

    CriticStep out;
    ad::Var<T> total = l_q;
    if (lambda != 0.0) {
      auto feats_m = nets_.encode(
          P, ad::constant(masked_observation(batch.obs, masks)));
      auto [q1m, q2m] = nets_.q_pair(P, feats_m, act);
      auto q1c = stop_grad_unmasked ? ad::detach(q1) : q1;
      auto q2c = stop_grad_unmasked ? ad::detach(q2) : q2;
      auto l_c = ad::scale(
          ad::add(ad::sum_all(ad::square(ad::sub(q1c, q1m))),
                  ad::sum_all(ad::square(ad::sub(q2c, q2m)))),
          1.0 / (2.0 * double(b)));
      out.l_c = double(l_c->value[0]);
      out.mask_fraction = double(masks.sum()) / double(masks.numel());
      total = ad::add(l_q, ad::scale(l_c, lambda));
    }

    out.l_q = double(l_q->value[0]);
    double abs_q = 0.0;
    for (int i = 0; i < b; ++i)
      abs_q += std::abs(double(q1->value[i])) + std::abs(double(q2->value[i]));
    out.mean_abs_q = abs_q / (2.0 * double(b));

    if (!std::isfinite(out.l_q) || !std::isfinite(out.l_c))
      throw std::runtime_error("critic_update: non-finite loss");
    ad::backward(total);
    out.grad_norm = grad_norm(P, {&nets_.encoder_ids, &nets_.q1_ids,
                                  &nets_.q2_ids});
    opt_critic_.step(nets_.store, P);
    return out;
  }

  // Loss value only, on the current parameters; shares the formula with
  // critic_update but takes rho and the attribution method explicitly.
  double consistency_loss(const Batch<T>& batch, double rho,
                          AttributionMethod method) const {
    const int b = batch.obs.dim(0);
    const Tensor<T> masks = attribution_masks(batch.obs, batch.actions, rho,
                                              method);
    auto P = nets_.wrap(nets_.no_grads());
    auto act = ad::constant(Tensor<T>(batch.actions));
    auto feats = nets_.encode(P, ad::constant(Tensor<T>(batch.obs)));
    auto [q1, q2] = nets_.q_pair(P, feats, act);
    auto feats_m =
        nets_.encode(P, ad::constant(masked_observation(batch.obs, masks)));
    auto [q1m, q2m] = nets_.q_pair(P, feats_m, act);
    double acc = 0.0;
    for (int i = 0; i < b; ++i) {
      const double d1 = double(q1->value[i]) - double(q1m->value[i]);
      const double d2 = double(q2->value[i]) - double(q2m->value[i]);
      acc += d1 * d1 + d2 * d2;
    }
    const double l = acc / (2.0 * double(b));
    if (!std::isfinite(l))
      throw std::runtime_error("consistency_loss: non-finite loss");
    return l;
  }

  // ----- actor and temperature ----------------------------------------------

  struct ActorStep {
    double l_actor = 0.0;
    double l_temp = 0.0;
    double grad_norm = 0.0;
  };

  // L_pi = E[temperature*log pi(a~|s) - min Q(s,a~)] with a~ reparameterized
  // through tanh; the encoder and critics enter as constants, so this step
  // can only move actor parameters. The temperature loss
  // E[-log_temp*(log pi + target_entropy)] treats log pi as a constant.
  ActorStep actor_and_temperature_step(const Batch<T>& batch, Rng& actor_rng) {
    const int b = batch.obs.dim(0);
    const int d = nets_.action_dim();

    auto P = nets_.wrap(mark_actor_);
    auto feats = nets_.encode(P, ad::constant(Tensor<T>(batch.obs)));
    auto [mean, log_std] = nets_.actor_head(P, feats);

    Tensor<T> eps({b, d});
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = T(actor_rng.normal());

    auto u = ad::add(mean, ad::mul(ad::exp_op(log_std), ad::constant(eps)));
    auto a = ad::tanh_op(u);

    // log N(u; mean, std) = -0.5*log(2*pi) - log_std - 0.5*eps^2, then the
    // tanh correction log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u)).
    Tensor<T> gauss_const({b, d});
    const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
    for (int64_t i = 0; i < gauss_const.numel(); ++i)
      gauss_const[i] = T(-half_log_2pi - 0.5 * double(eps[i]) * double(eps[i]));
    auto gauss = ad::sub(ad::constant(std::move(gauss_const)), log_std);
    auto correction = ad::scale(
        ad::add_scalar(ad::sub(ad::neg(u), ad::softplus(ad::scale(u, -2.0))),
                       std::log(2.0)),
        2.0);
    auto log_prob = ad::sum_lastdim(ad::sub(gauss, correction));  // [B]

    auto [q1, q2] = nets_.q_pair(P, feats, a);
    auto minq = ad::reshape(ad::min_elem(q1, q2), {b});
    const double temp = temperature();
    auto l_actor =
        ad::mean_all(ad::sub(ad::scale(log_prob, temp), minq));

    ActorStep out;
    out.l_actor = double(l_actor->value[0]);
    if (!std::isfinite(out.l_actor))
      throw std::runtime_error("actor update: non-finite loss");
    ad::backward(l_actor);
    out.grad_norm = grad_norm(P, {&nets_.actor_ids});
    opt_actor_.step(nets_.store, P);

    // temperature step on the pre-update log-probs
    double coeff = 0.0;
    for (int i = 0; i < b; ++i)
      coeff += double(log_prob->value[i]) + target_entropy();
    coeff /= double(b);
    auto P2 = nets_.wrap(mark_temp_);
    auto l_temp = ad::scale(P2[nets_.log_temp_id], -coeff);
    out.l_temp = double(l_temp->value[0]);
    if (!std::isfinite(out.l_temp))
      throw std::runtime_error("temperature update: non-finite loss");
    ad::backward(l_temp);
    opt_temp_.step(nets_.store, P2);
    return out;
  }

  // ----- self-supervised phase ----------------------------------------------

  struct SslStep {
    double l_ssl = 0.0;
    double mask_fraction = 0.0;
    double grad_norm = 0.0;
  };

  // Predicts the binarized clean-observation attribution from augmented
  // observations; updates encoder and decoder only (the critic trunk the
  // decoder reads through stays frozen).
  SslStep ssl_update(const Tensor<T>& obs_batch, const Tensor<T>& actions,
                     Rng& augment_rng, const BackgroundLibrary* lib = nullptr) {
    const Tensor<T> aug =
        aug::apply_augmentation_batch(cfg_, obs_batch, augment_rng, lib);
    auto P = nets_.wrap(mark_ssl_);
    auto built = build_ssl_loss(P, obs_batch, actions, aug, cfg_.rho,
                                cfg_.attribution_method);
    SslStep out;
    out.l_ssl = double(built.loss->value[0]);
    out.mask_fraction = built.mask_fraction;
    if (!std::isfinite(out.l_ssl))
      throw std::runtime_error("ssl_update: non-finite loss");
    ad::backward(built.loss);
    out.grad_norm = grad_norm(P, {&nets_.encoder_ids, &nets_.decoder_ids});
    opt_ssl_.step(nets_.store, P);
    return out;
  }

  // Loss value only, with an explicit augmented batch (no rng, no step).
  double ssl_loss(const Tensor<T>& obs_batch, const Tensor<T>& actions,
                  const Tensor<T>& augmented, double rho,
                  AttributionMethod method) const {
    auto P = nets_.wrap(nets_.no_grads());
    auto built = build_ssl_loss(P, obs_batch, actions, augmented, rho, method);
    const double l = double(built.loss->value[0]);
    if (!std::isfinite(l))
      throw std::runtime_error("ssl_loss: non-finite loss");
    return l;
  }

  // ----- one full training step ---------------------------------------------

  // In order: sample, critic (L_Q + lambda*L_C), actor and temperature,
  // self-supervised phase on step indices divisible by ssl_every (variants
  // with SSL only), polyak target updates on indices divisible by
  // target_update_every.
  LossReport train_step(ReplayBuffer<T>& buffer, Rng& replay_rng,
                        Rng& actor_rng, Rng& augment_rng, int64_t step_index,
                        const BackgroundLibrary* lib = nullptr) {
    try {
      Batch<T> batch = buffer.sample(cfg_.batch_size, replay_rng);
      const Tensor<T> y = critic_target(batch, actor_rng);
      const CriticStep cs = critic_update(batch, y);
      const ActorStep as = actor_and_temperature_step(batch, actor_rng);

      LossReport r;
      r.l_q = cs.l_q;
      r.l_c = cs.l_c;
      r.mask_fraction = cs.mask_fraction;
      r.mean_abs_q = cs.mean_abs_q;
      r.grad_norm_critic = cs.grad_norm;
      r.l_actor = as.l_actor;
      r.l_temp = as.l_temp;
      r.grad_norm_actor = as.grad_norm;

      if (variant_uses_ssl(cfg_.variant) && step_index % cfg_.ssl_every == 0) {
        const SslStep ss =
            ssl_update(batch.obs, batch.actions, augment_rng, lib);
        r.l_ssl = ss.l_ssl;
        r.grad_norm_ssl = ss.grad_norm;
        if (r.mask_fraction == 0.0) r.mask_fraction = ss.mask_fraction;
      }

      if (step_index % cfg_.target_update_every == 0) {
        nets_.polyak_update_encoder(cfg_.momentum_encoder);
        nets_.polyak_update_critics(cfg_.momentum_critic);
      }

      r.temperature = temperature();
      if (!r.all_finite())
        throw std::runtime_error("non-finite loss report");
      return r;
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train_step " + std::to_string(step_index) +
                               ": " + e.what());
    }
  }

 private:
  struct SslGraph {
    ad::Var<T> loss;
    double mask_fraction = 0.0;
  };

  SslGraph build_ssl_loss(const std::vector<ad::Var<T>>& P,
                          const Tensor<T>& obs_batch, const Tensor<T>& actions,
                          const Tensor<T>& augmented, double rho,
                          AttributionMethod method) const {
    const Tensor<T> target = attribution_masks(obs_batch, actions, rho, method);
    auto act = ad::constant(Tensor<T>(actions));
    auto feats = nets_.encode(P, ad::constant(Tensor<T>(augmented)));
    auto embed = nets_.head_embed(P, feats, 1);
    auto logits = nets_.decode(P, embed, act);
    auto probs = ad::clamp_op(ad::sigmoid(logits), T(1e-6), T(1.0 - 1e-6));
    SslGraph g;
    g.loss = ad::bce_loss(probs, target);
    g.mask_fraction = double(target.sum()) / double(target.numel());
    return g;
  }

  static double grad_norm(const std::vector<ad::Var<T>>& P,
                          std::initializer_list<const std::vector<size_t>*> groups) {
    double acc = 0.0;
    for (const auto* g : groups)
      for (size_t id : *g) {
        const auto& leaf = P[id];
        if (!leaf->grad_alloc) continue;
        for (int64_t i = 0; i < leaf->grad.numel(); ++i)
          acc += double(leaf->grad[i]) * double(leaf->grad[i]);
      }
    return std::sqrt(acc);
  }

  ExperimentConfig cfg_;
  Networks<T> nets_;
  Adam<T> opt_critic_, opt_actor_, opt_temp_, opt_ssl_;
  std::vector<bool> mark_critic_, mark_actor_, mark_temp_, mark_ssl_;
};

}  // namespace sgqn
