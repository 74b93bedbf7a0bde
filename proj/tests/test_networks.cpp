#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sgqn/networks.hpp"

using namespace sgqn;
namespace ad = sgqn::ad;

namespace {

ExperimentConfig tiny_cfg(int image_size = 12, int frame_stack = 1) {
  ExperimentConfig c;
  c.image_size = image_size;
  c.frame_stack = frame_stack;
  return c;
}

template <typename T>
Tensor<T> random_obs(Rng& rng, int b, int c, int s) {
  Tensor<T> t({b, c, s, s});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("encoder plan across the valid size family") {
  EncoderPlan p84 = EncoderPlan::make(84);
  CHECK(p84.conv_layers == 11);
  CHECK(p84.conv1_out == 41);
  CHECK(p84.latent == 21);

  EncoderPlan p28 = EncoderPlan::make(28);
  CHECK(p28.conv_layers == 4);
  CHECK(p28.conv1_out == 13);
  CHECK(p28.latent == 7);

  EncoderPlan p12 = EncoderPlan::make(12);
  CHECK(p12.conv_layers == 2);
  CHECK(p12.latent == 3);

  CHECK_THROWS_AS(EncoderPlan::make(64), std::invalid_argument);
  CHECK_THROWS_AS(EncoderPlan::make(4), std::invalid_argument);
}

TEST_CASE("spatial trace at 84 matches conv arithmetic layer by layer") {
  // stride-2 first layer: 84 -> 41, then each stride-1 3x3 layer shrinks
  // the side by 2 down to 21
  ExperimentConfig c = tiny_cfg(84, 3);
  Networks<float> nets(c, 2, 0);
  auto P = nets.wrap(nets.no_grads());
  Rng rng(1);
  auto obs = ad::constant(random_obs<float>(rng, 1, 9, 84));

  ad::Var<float> x = obs;
  int expected = 84;
  for (int l = 0; l < nets.plan().conv_layers; ++l) {
    const int stride = l == 0 ? 2 : 1;
    x = ad::relu(ad::conv2d(x, P[nets.encoder_ids[2 * l]], P[nets.encoder_ids[2 * l + 1]],
                            stride, 0));
    expected = l == 0 ? (expected - 3) / 2 + 1 : expected - 2;
    CHECK(x->value.dim(2) == expected);
    CHECK(x->value.dim(3) == expected);
    CHECK(x->value.dim(1) == 32);
  }
  CHECK(expected == 21);

  auto feats = nets.encode(P, obs);
  REQUIRE(feats->value.shape == std::vector<int>{1, 32, 21, 21});
}

TEST_CASE("init determinism and target copies") {
  ExperimentConfig c = tiny_cfg(20, 2);
  Networks<float> a(c, 2, 0);
  Networks<float> b(c, 2, 0);
  REQUIRE(a.store.size() == b.store.size());
  for (size_t i = 0; i < a.store.size(); ++i) {
    REQUIRE(a.store.names[i] == b.store.names[i]);
    REQUIRE(a.store[i].shape == b.store[i].shape);
    for (int64_t k = 0; k < a.store[i].numel(); ++k) REQUIRE(a.store[i][k] == b.store[i][k]);
  }
  Networks<float> d(c, 2, 1);
  bool any_diff = false;
  for (size_t i = 0; i < a.store.size() && !any_diff; ++i)
    for (int64_t k = 0; k < a.store[i].numel() && !any_diff; ++k)
      if (a.store[i][k] != d.store[i][k]) any_diff = true;
  CHECK(any_diff);

  for (size_t k = 0; k < a.encoder_ids.size(); ++k) {
    const auto& on = a.store[a.encoder_ids[k]];
    const auto& tg = a.store[a.target_encoder_ids[k]];
    for (int64_t i = 0; i < on.numel(); ++i) REQUIRE(on[i] == tg[i]);
  }
  for (size_t k = 0; k < a.q1_ids.size(); ++k) {
    const auto& on = a.store[a.q1_ids[k]];
    const auto& tg = a.store[a.target_q1_ids[k]];
    for (int64_t i = 0; i < on.numel(); ++i) REQUIRE(on[i] == tg[i]);
  }
  CHECK(a.store.index_of("log_temp") == a.log_temp_id);
  CHECK_THROWS_AS(a.store.index_of("bogus"), std::invalid_argument);
}

TEST_CASE("critic heads are per-sample functions") {
  ExperimentConfig c = tiny_cfg(12, 1);
  Networks<float> nets(c, 2, 3);
  auto P = nets.wrap(nets.no_grads());
  Rng rng(7);
  Tensor<float> obs1 = random_obs<float>(rng, 1, 3, 12);
  Tensor<float> act1({1, 2});
  act1[0] = 0.3f;
  act1[1] = -0.5f;

  // duplicate the sample; outputs must duplicate
  Tensor<float> obs2({2, 3, 12, 12});
  std::copy_n(obs1.ptr(), obs1.numel(), obs2.ptr());
  std::copy_n(obs1.ptr(), obs1.numel(), obs2.ptr() + obs1.numel());
  Tensor<float> act2({2, 2});
  act2[0] = act2[2] = 0.3f;
  act2[1] = act2[3] = -0.5f;

  auto f1 = nets.encode(P, ad::constant(Tensor<float>(obs1)));
  auto [q1a, q2a] = nets.q_pair(P, f1, ad::constant(Tensor<float>(act1)));
  REQUIRE(q1a->value.shape == std::vector<int>{1, 1});
  REQUIRE(q2a->value.shape == std::vector<int>{1, 1});

  auto f2 = nets.encode(P, ad::constant(Tensor<float>(obs2)));
  auto [q1b, q2b] = nets.q_pair(P, f2, ad::constant(Tensor<float>(act2)));
  CHECK(q1b->value[0] == doctest::Approx(q1a->value[0]).epsilon(1e-6));
  CHECK(q1b->value[1] == doctest::Approx(q1a->value[0]).epsilon(1e-6));
  CHECK(q2b->value[0] == doctest::Approx(q2a->value[0]).epsilon(1e-6));

  // the two heads are distinct functions
  CHECK(q1a->value[0] != q2a->value[0]);

  CHECK_THROWS_AS(nets.q_head(P, f1, ad::constant(Tensor<float>(act1)), 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(nets.encode(P, ad::constant(Tensor<float>::zeros({1, 3, 16, 16}))),
                  std::invalid_argument);
}

TEST_CASE("gradient of q1 w.r.t. the observation exists with obs shape") {
  ExperimentConfig c = tiny_cfg(12, 1);
  Networks<float> nets(c, 2, 5);
  auto P = nets.wrap(nets.no_grads());
  Rng rng(9);
  Tensor<float> obs = random_obs<float>(rng, 2, 3, 12);
  Tensor<float> act({2, 2});
  for (int64_t i = 0; i < act.numel(); ++i) act[i] = float(rng.uniform(-1, 1));

  auto leaf_obs = ad::leaf(Tensor<float>(obs), true);
  auto q1 = nets.q_head(P, nets.encode(P, leaf_obs), ad::constant(Tensor<float>(act)), 1);
  ad::backward(ad::sum_all(q1));
  REQUIRE(leaf_obs->grad_alloc);
  CHECK(leaf_obs->grad.shape == obs.shape);
  CHECK(leaf_obs->grad.all_finite());
}

TEST_CASE("reverse-mode obs gradient matches fp64 central differences") {
  ExperimentConfig c = tiny_cfg(12, 1);
  Networks<double> nets(c, 2, 11);
  auto P = nets.wrap(nets.no_grads());
  Rng rng(13);
  Tensor<double> obs = random_obs<double>(rng, 1, 3, 12);
  Tensor<double> act({1, 2});
  act[0] = 0.2;
  act[1] = -0.7;

  auto q_of = [&](const Tensor<double>& o) {
    auto feats = nets.encode(P, ad::constant(Tensor<double>(o)));
    return nets.q_head(P, feats, ad::constant(Tensor<double>(act)), 1)->value[0];
  };

  auto leaf_obs = ad::leaf(Tensor<double>(obs), true);
  auto q = nets.q_head(P, nets.encode(P, leaf_obs), ad::constant(Tensor<double>(act)), 1);
  ad::backward(ad::sum_all(q));

  const double h = 1e-4;
  Rng pick(17);
  for (int t = 0; t < 25; ++t) {
    const int64_t i = pick.uniform_int(0, int(obs.numel() - 1));
    Tensor<double> o = obs;
    o[i] = obs[i] + h;
    const double fp = q_of(o);
    o[i] = obs[i] - h;
    const double fm = q_of(o);
    const double num = (fp - fm) / (2 * h);
    const double an = leaf_obs->grad[i];
    const double denom = std::max({std::abs(num), std::abs(an), 1e-8});
    CHECK(std::abs(num - an) / denom <= 1e-4);
  }
}

TEST_CASE("actor behavior") {
  ExperimentConfig c = tiny_cfg(12, 1);
  Networks<float> nets(c, 2, 21);
  Rng rng(31);
  Tensor<float> obs({3, 12, 12});
  for (int64_t i = 0; i < obs.numel(); ++i) obs[i] = float(rng.uniform());

  SUBCASE("mean mode is deterministic") {
    auto a = nets.act(obs, false, nullptr);
    auto b = nets.act(obs, false, nullptr);
    CHECK(a.action == b.action);
  }

  SUBCASE("sampled actions lie in (-1,1) with finite log-probs") {
    Rng arng(5);
    for (int t = 0; t < 200; ++t) {
      Tensor<float> o({3, 12, 12});
      for (int64_t i = 0; i < o.numel(); ++i) o[i] = float(arng.uniform());
      auto r = nets.act(o, true, &arng);
      for (double v : r.action) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);
      }
      CHECK(std::isfinite(r.log_prob));
    }
  }

  SUBCASE("mean action is unaffected by scaling the log-std outputs") {
    auto before = nets.act(obs, false, nullptr);
    // rows [d, 2d) of the final actor layer produce log-std
    Tensor<float>& w = nets.store[nets.actor_ids[8]];
    Tensor<float>& b = nets.store[nets.actor_ids[9]];
    const int d = nets.action_dim();
    for (int row = d; row < 2 * d; ++row) {
      for (int col = 0; col < w.dim(1); ++col) w[row * w.dim(1) + col] *= 3.0f;
      b[row] += 0.7f;
    }
    auto after = nets.act(obs, false, nullptr);
    CHECK(before.action == after.action);
  }

  SUBCASE("sampling requires an rng") {
    CHECK_THROWS_AS(nets.act(obs, true, nullptr), std::invalid_argument);
  }

  SUBCASE("sampled log-prob matches a naive tanh-normal density") {
    auto P = nets.wrap(nets.no_grads());
    Tensor<float> batched;
    batched.shape = {1, 3, 12, 12};
    batched.data = obs.data;
    auto feats = nets.encode(P, ad::constant(batched));
    auto [mean, log_std] = nets.actor_head(P, feats);

    for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
      Rng draw(seed);
      auto r = nets.act(obs, true, &draw);

      Rng replay_draw(seed);
      double expect = 0.0;
      for (int i = 0; i < 2; ++i) {
        const double mu = double(mean->value[i]);
        const double ls = double(log_std->value[i]);
        const double eps = replay_draw.normal();
        const double u = mu + std::exp(ls) * eps;
        const double a = std::tanh(u);
        expect += -0.5 * std::log(2.0 * M_PI) - ls - 0.5 * eps * eps -
                  std::log(1.0 - a * a);
      }
      CHECK(r.log_prob == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("decoder output shape mirrors the observation") {
  for (int s : {12, 28}) {
    ExperimentConfig c = tiny_cfg(s, 2);
    Networks<float> nets(c, 1, 2);
    auto P = nets.wrap(nets.no_grads());
    Rng rng(41);
    auto obs = ad::constant(random_obs<float>(rng, 2, 6, s));
    Tensor<float> act({2, 1});
    act[0] = 0.1f;
    act[1] = -0.9f;
    auto feats = nets.encode(P, obs);
    auto embed = nets.head_embed(P, feats, 1);
    REQUIRE(embed->value.shape == std::vector<int>{2, 100});
    auto logits = nets.decode(P, embed, ad::constant(Tensor<float>(act)));
    REQUIRE(logits->value.shape == std::vector<int>{2, 6, s, s});
  }
}

TEST_CASE("decoder spatial trace doubles twice from latent to image") {
  ExperimentConfig c = tiny_cfg(84, 3);
  Networks<float> nets(c, 2, 2);
  auto P = nets.wrap(nets.no_grads());
  Rng rng(43);
  auto obs = ad::constant(random_obs<float>(rng, 1, 9, 84));
  auto embed = nets.head_embed(P, nets.encode(P, obs), 1);
  Tensor<float> act({1, 2});
  act[0] = 0.f;
  act[1] = 0.f;

  // replicate decode() stage by stage to observe the trace
  auto h = ad::relu(ad::linear(ad::concat_cols(embed, ad::constant(Tensor<float>(act))),
                               P[nets.decoder_ids[0]], P[nets.decoder_ids[1]]));
  auto x = ad::reshape(h, {1, 32, 21, 21});
  x = ad::upsample2(ad::relu(ad::conv2d(x, P[nets.decoder_ids[2]], P[nets.decoder_ids[3]], 1, 1)));
  CHECK(x->value.dim(2) == 42);
  x = ad::upsample2(ad::relu(ad::conv2d(x, P[nets.decoder_ids[4]], P[nets.decoder_ids[5]], 1, 1)));
  CHECK(x->value.dim(2) == 84);
  x = ad::conv2d(x, P[nets.decoder_ids[6]], P[nets.decoder_ids[7]], 1, 1);
  REQUIRE(x->value.shape == std::vector<int>{1, 9, 84, 84});
}

TEST_CASE("gradients reach encoder parameters through the decoder") {
  ExperimentConfig c = tiny_cfg(12, 1);
  Networks<float> nets(c, 2, 6);
  auto mask = nets.mark({&nets.encoder_ids, &nets.decoder_ids});
  auto P = nets.wrap(mask);
  Rng rng(51);
  auto obs = ad::constant(random_obs<float>(rng, 1, 3, 12));
  Tensor<float> act({1, 2});
  act[0] = 0.4f;
  act[1] = 0.4f;
  auto embed = nets.head_embed(P, nets.encode(P, obs), 1);
  auto logits = nets.decode(P, embed, ad::constant(Tensor<float>(act)));
  ad::backward(ad::mean_all(ad::square(logits)));

  // the q1 trunk between encoder and decoder is frozen here, but gradient
  // still has to flow through it into the conv stack
  bool encoder_has_grad = false;
  for (size_t id : nets.encoder_ids)
    if (P[id]->grad_alloc && P[id]->grad.max() != 0.f) encoder_has_grad = true;
  CHECK(encoder_has_grad);
  bool decoder_has_grad = false;
  for (size_t id : nets.decoder_ids)
    if (P[id]->grad_alloc && P[id]->grad.max() != 0.f) decoder_has_grad = true;
  CHECK(decoder_has_grad);
  for (size_t id : nets.target_encoder_ids) CHECK(!P[id]->grad_alloc);
}

TEST_CASE("polyak updates") {
  ExperimentConfig c = tiny_cfg(12, 1);
  Networks<float> nets(c, 2, 8);

  SUBCASE("m=0 leaves targets unchanged") {
    auto before = nets.store[nets.target_q1_ids[0]];
    nets.store[nets.q1_ids[0]].fill(5.f);
    nets.polyak_update_critics(0.0);
    const auto& after = nets.store[nets.target_q1_ids[0]];
    for (int64_t i = 0; i < before.numel(); ++i) REQUIRE(after[i] == before[i]);
  }

  SUBCASE("m=1 copies online exactly") {
    nets.store[nets.encoder_ids[0]].fill(2.5f);
    nets.polyak_update_encoder(1.0);
    const auto& t = nets.store[nets.target_encoder_ids[0]];
    for (int64_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == 2.5f);
  }

  SUBCASE("documented arithmetic case") {
    nets.store[nets.target_encoder_ids[0]].fill(0.f);
    nets.store[nets.encoder_ids[0]].fill(1.f);
    nets.polyak_update_encoder(0.05);
    CHECK(nets.store[nets.target_encoder_ids[0]][0] == doctest::Approx(0.05f));
  }

  SUBCASE("momentum bounds checked") {
    CHECK_THROWS_AS(nets.polyak_update_encoder(-0.1), std::invalid_argument);
    CHECK_THROWS_AS(nets.polyak_update_critics(1.5), std::invalid_argument);
  }
}
