#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sgqn/augment.hpp"

using namespace sgqn;

namespace {

Tensor<float> random_obs(int c, int s, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({c, s, s});
  for (auto& v : t.data) v = float(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("overlay blends pointwise and clamps") {
  Tensor<float> obs({3, 2, 2});
  obs.fill(0.2f);
  Tensor<float> dis({3, 2, 2});
  dis.fill(0.8f);

  auto half = aug::overlay(obs, dis, 0.5);
  for (float v : half.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));

  auto ident = aug::overlay(obs, dis, 0.0);
  CHECK(ident.data == obs.data);

  auto full = aug::overlay(obs, dis, 1.0);
  CHECK(full.data == dis.data);

  // alpha=0.25: 0.75*0.2 + 0.25*0.8 = 0.35
  auto quarter = aug::overlay(obs, dis, 0.25);
  for (float v : quarter.data) CHECK(v == doctest::Approx(0.35).epsilon(1e-6));
}

TEST_CASE("overlay tiles a 3-channel distractor across a stacked observation") {
  Tensor<float> obs({9, 4, 4});
  for (size_t i = 0; i < obs.data.size(); ++i)
    obs.data[i] = float(i % 7) / 10.0f;
  Tensor<float> dis({3, 4, 4});
  for (size_t i = 0; i < dis.data.size(); ++i)
    dis.data[i] = float(i % 5) / 10.0f;

  auto out = aug::overlay(obs, dis, 0.5);
  REQUIRE(out.shape == obs.shape);
  const int plane = 16;
  for (int ch = 0; ch < 9; ++ch) {
    for (int i = 0; i < plane; ++i) {
      const float expect =
          0.5f * obs.data[ch * plane + i] + 0.5f * dis.data[(ch % 3) * plane + i];
      CHECK(out.data[ch * plane + i] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
}

TEST_CASE("overlay validates alpha and shapes") {
  Tensor<float> obs({3, 4, 4});
  Tensor<float> dis({3, 4, 4});
  CHECK_THROWS_AS(aug::overlay(obs, dis, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(aug::overlay(obs, dis, 1.1), std::invalid_argument);

  Tensor<float> wrong_hw({3, 4, 5});
  CHECK_THROWS_AS(aug::overlay(obs, wrong_hw, 0.5), std::invalid_argument);
  Tensor<float> wrong_c({2, 4, 4});
  CHECK_THROWS_AS(aug::overlay(obs, wrong_c, 0.5), std::invalid_argument);

  // 4-channel obs cannot take a 3-channel distractor: not a whole stack
  Tensor<float> obs4({4, 4, 4});
  CHECK_THROWS_AS(aug::overlay(obs4, dis, 0.5), std::invalid_argument);
}

TEST_CASE("overlay is monotone per pixel") {
  // Blending never reorders two pixels that share a distractor value, so
  // foreground structure survives any alpha.
  Tensor<float> obs({3, 1, 2});
  obs.data = {0.9f, 0.1f, 0.8f, 0.2f, 0.7f, 0.3f};
  Tensor<float> dis({3, 1, 2});
  dis.fill(0.5f);
  for (double alpha : {0.1, 0.5, 0.9}) {
    auto out = aug::overlay(obs, dis, alpha);
    CHECK(out.data[0] > out.data[1]);
    CHECK(out.data[2] > out.data[3]);
    CHECK(out.data[4] > out.data[5]);
  }
}

TEST_CASE("identity kernel leaves the image unchanged up to renormalization") {
  auto obs = random_obs(6, 8, 41);
  double kernel[9] = {0, 0, 0, 0, 1, 0, 0, 0, 0};
  auto out = aug::conv_with_kernel(obs, kernel);

  const double mn = obs.min();
  const double mx = obs.max();
  REQUIRE(mx > mn);
  for (size_t i = 0; i < obs.data.size(); ++i) {
    const double expect = (obs.data[i] - mn) / (mx - mn);
    CHECK(double(out.data[i]) == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("conv_with_kernel maps constant images to 0.5") {
  Tensor<float> obs({3, 5, 5});
  obs.fill(0.7f);
  double kernel[9] = {1, -2, 3, 0.5, 1, -1, 2, 0, 1};
  auto out = aug::conv_with_kernel(obs, kernel);
  for (float v : out.data) CHECK(v == 0.5f);
}

TEST_CASE("random_conv is deterministic and stays in range") {
  auto obs = random_obs(9, 12, 7);

  Rng a(123), b(123);
  auto outa = aug::random_conv(obs, a);
  auto outb = aug::random_conv(obs, b);
  CHECK(outa.data == outb.data);

  Rng c(124);
  auto outc = aug::random_conv(obs, c);
  CHECK(outa.data != outc.data);

  Rng rng(55);
  for (int trial = 0; trial < 1000; ++trial) {
    auto out = aug::random_conv(obs, rng);
    CHECK(out.min() >= 0.0f);
    CHECK(out.max() <= 1.0f);
    // min-max renormalization always touches both endpoints
    CHECK(out.min() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(out.max() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("random_conv shares one kernel across the whole stack") {
  // Two identical frames inside one stack must transform identically.
  Tensor<float> obs({6, 8, 8});
  auto frame = random_obs(3, 8, 99);
  std::copy(frame.data.begin(), frame.data.end(), obs.data.begin());
  std::copy(frame.data.begin(), frame.data.end(), obs.data.begin() + 3 * 64);

  Rng rng(17);
  auto out = aug::random_conv(obs, rng);
  for (int i = 0; i < 3 * 64; ++i) CHECK(out.data[i] == out.data[i + 3 * 64]);
}

TEST_CASE("shift_crop index bookkeeping") {
  const int s = 8, pad = 4;
  Tensor<float> obs({2, s, s});
  for (size_t i = 0; i < obs.data.size(); ++i) obs.data[i] = float(i);

  SUBCASE("centered offsets are the identity") {
    auto out = aug::shift_crop(obs, pad, pad, pad);
    CHECK(out.data == obs.data);
  }

  SUBCASE("shift of (+4,0): output column c equals input column c-4") {
    auto out = aug::shift_crop(obs, pad, pad, 0);
    for (int ch = 0; ch < 2; ++ch)
      for (int y = 0; y < s; ++y)
        for (int x = 4; x < s; ++x)
          CHECK(out.data[(ch * s + y) * s + x] ==
                obs.data[(ch * s + y) * s + x - 4]);
    // left edge replicates column 0
    for (int ch = 0; ch < 2; ++ch)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < 4; ++x)
          CHECK(out.data[(ch * s + y) * s + x] == obs.data[(ch * s + y) * s]);
  }

  SUBCASE("vertical shift moves rows") {
    auto out = aug::shift_crop(obs, pad, pad + 2, pad);
    for (int ch = 0; ch < 2; ++ch)
      for (int y = 0; y < s - 2; ++y)
        for (int x = 0; x < s; ++x)
          CHECK(out.data[(ch * s + y) * s + x] ==
                obs.data[(ch * s + y + 2) * s + x]);
  }

  SUBCASE("offsets outside [0, 2*pad] rejected") {
    CHECK_THROWS_AS(aug::shift_crop(obs, pad, -1, 0), std::invalid_argument);
    CHECK_THROWS_AS(aug::shift_crop(obs, pad, 0, 9), std::invalid_argument);
  }
}

TEST_CASE("random_shift properties") {
  auto obs = random_obs(6, 10, 3);

  SUBCASE("pad = 0 is the identity and draws nothing") {
    Rng rng(1);
    const uint64_t before = rng.next_u64();
    Rng again(1);
    auto out = aug::random_shift(obs, again, 0);
    CHECK(out.data == obs.data);
    CHECK(again.next_u64() == before);
  }

  SUBCASE("deterministic given rng state, shape and range preserved") {
    Rng a(9), b(9);
    auto outa = aug::random_shift(obs, a);
    auto outb = aug::random_shift(obs, b);
    CHECK(outa.data == outb.data);
    CHECK(outa.shape == obs.shape);
    CHECK(outa.min() >= 0.0f);
    CHECK(outa.max() <= 1.0f);
  }

  SUBCASE("all channels shift identically") {
    // Make every channel a copy; shifted copies must stay equal.
    Tensor<float> stacked({6, 10, 10});
    for (int ch = 0; ch < 6; ++ch)
      std::copy_n(obs.data.begin(), 100, stacked.data.begin() + ch * 100);
    Rng rng(77);
    auto out = aug::random_shift(stacked, rng);
    for (int ch = 1; ch < 6; ++ch)
      for (int i = 0; i < 100; ++i)
        CHECK(out.data[ch * 100 + i] == out.data[i]);
  }
}

TEST_CASE("apply_augmentation dispatches per config") {
  ExperimentConfig cfg;
  cfg.image_size = 12;
  cfg.frame_stack = 2;
  auto obs = random_obs(6, 12, 8);

  cfg.augmentation = Augmentation::none;
  {
    Rng rng(5);
    auto out = aug::apply_augmentation(cfg, obs, rng);
    CHECK(out.data == obs.data);
  }

  cfg.augmentation = Augmentation::overlay;
  cfg.overlay_alpha = 0.5;
  {
    Rng a(5), b(5);
    auto outa = aug::apply_augmentation(cfg, obs, a);
    auto outb = aug::apply_augmentation(cfg, obs, b);
    CHECK(outa.data == outb.data);
    CHECK(outa.data != obs.data);
    CHECK(outa.min() >= 0.0f);
    CHECK(outa.max() <= 1.0f);
  }

  cfg.augmentation = Augmentation::random_conv;
  {
    Rng rng(5);
    auto out = aug::apply_augmentation(cfg, obs, rng);
    CHECK(out.shape == obs.shape);
    CHECK(out.min() >= 0.0f);
    CHECK(out.max() <= 1.0f);
  }

  cfg.augmentation = Augmentation::random_shift;
  {
    Rng rng(5);
    auto out = aug::apply_augmentation(cfg, obs, rng);
    CHECK(out.shape == obs.shape);
  }
}

TEST_CASE("apply_augmentation_batch draws fresh parameters per sample") {
  ExperimentConfig cfg;
  cfg.image_size = 12;
  cfg.frame_stack = 1;
  cfg.augmentation = Augmentation::random_conv;

  // Same image in both batch rows: independent kernels should disagree.
  auto one = random_obs(3, 12, 21);
  Tensor<float> batch({2, 3, 12, 12});
  std::copy(one.data.begin(), one.data.end(), batch.data.begin());
  std::copy(one.data.begin(), one.data.end(),
            batch.data.begin() + one.data.size());

  Rng rng(6);
  auto out = aug::apply_augmentation_batch(cfg, batch, rng);
  REQUIRE(out.shape == batch.shape);
  bool differ = false;
  for (size_t i = 0; i < one.data.size(); ++i)
    if (out.data[i] != out.data[i + one.data.size()]) differ = true;
  CHECK(differ);

  CHECK_THROWS_AS(aug::apply_augmentation_batch(cfg, one, rng),
                  std::invalid_argument);
}
