#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "sgqn/config.hpp"

using namespace sgqn;

TEST_CASE("defaults") {
  ExperimentConfig c = parse_config_text("");
  CHECK(c.env_id == "point_reach");
  CHECK(c.image_size == 84);
  CHECK(c.frame_stack == 3);
  CHECK(c.action_repeat == 4);
  CHECK(c.discount == 0.99);
  CHECK(c.episode_length == 1000);
  CHECK(c.total_env_steps == 100000);
  CHECK(c.replay_capacity == 100000);
  CHECK(c.batch_size == 128);
  CHECK(c.lr_main == 1e-3);
  CHECK(c.lr_ssl == 3e-4);
  CHECK(c.lr_temp == 1e-4);
  CHECK(c.target_update_every == 2);
  CHECK(c.momentum_encoder == 0.05);
  CHECK(c.momentum_critic == 0.01);
  CHECK(c.ssl_every == 2);
  CHECK(c.rho == 0.95);
  CHECK(c.lambda_consistency == 1.0);
  CHECK(c.augmentation == Augmentation::overlay);
  CHECK(c.overlay_alpha == 0.5);
  CHECK(c.attribution_method == AttributionMethod::guided_backprop);
  CHECK(c.variant == Variant::sgqn);
  CHECK(c.channels() == 9);
}

TEST_CASE("parsing values, comments, whitespace") {
  ExperimentConfig c = parse_config_text(
      "# comment line\n"
      "discount = 0.99\n"
      "batch_size=128\n"
      "\n"
      "  env_id =  pendulum_swing   # trailing comment\n"
      "variant = sac_ssl\n"
      "seed = 12345\n");
  CHECK(c.discount == 0.99);
  CHECK(c.batch_size == 128);
  CHECK(c.env_id == "pendulum_swing");
  CHECK(c.variant == Variant::sac_ssl);
  CHECK(c.seed == 12345);
}

TEST_CASE("overrides win over the file") {
  ExperimentConfig c = parse_config_text("rho = 0.9\nseed = 1\n", {"rho=0.98", "seed=5"});
  CHECK(c.rho == 0.98);
  CHECK(c.seed == 5);
}

TEST_CASE("errors name the offending key") {
  CHECK_THROWS_WITH_AS(parse_config_text("rho = 1.5\n"),
                       doctest::Contains("rho"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("no_such_key = 3\n"),
                       doctest::Contains("no_such_key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("discount = 1.0\n"),
                       doctest::Contains("discount"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("discount = abc\n"),
                       doctest::Contains("discount"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("batch_size = 0\n"),
                       doctest::Contains("batch_size"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("batch_size = -8\n"),
                       doctest::Contains("batch_size"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("overlay_alpha = 1.2\n"),
                       doctest::Contains("overlay_alpha"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("lambda_consistency = -0.1\n"),
                       doctest::Contains("lambda_consistency"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("env_id = walker\n"),
                       doctest::Contains("env_id"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("augmentation = cutout\n"),
                       doctest::Contains("augmentation"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("variant = dqn\n"),
                       doctest::Contains("variant"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("image_size = 64\n"),
                       doctest::Contains("image_size"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("just a line without equals\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("", {"bad_override"}), std::invalid_argument);
}

TEST_CASE("nearby valid image sizes") {
  for (int s : {12, 20, 28, 36, 44, 52, 60, 68, 76, 84}) {
    ExperimentConfig c = parse_config_text("image_size = " + std::to_string(s) + "\n");
    CHECK(c.image_size == s);
  }
  for (int s : {8, 16, 24, 32, 48, 64, 96}) {
    CHECK_THROWS_AS(parse_config_text("image_size = " + std::to_string(s) + "\n"),
                    std::invalid_argument);
  }
}

TEST_CASE("round trip through text is the identity") {
  ExperimentConfig c;
  c.env_id = "pendulum_swing";
  c.seed = 77;
  c.variant = Variant::sgqn;
  c.rho = 0.97531;
  c.lr_main = 3.14159e-4;
  c.overlay_alpha = 0.123456789012345;
  c.augmentation = Augmentation::random_conv;
  c.attribution_method = AttributionMethod::vanilla_grad;
  c.total_env_steps = 123456789;
  ExperimentConfig back = parse_config_text(serialize_config(c));
  CHECK(back == c);
}

TEST_CASE("round trip through a file") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sgqn_cfg_test";
  fs::create_directories(dir);
  const std::string path = (dir / "cfg.txt").string();

  ExperimentConfig c;
  c.seed = 7;
  c.variant = Variant::sgqn;
  save_config(c, path);
  ExperimentConfig back = load_config(path);
  CHECK(back == c);
  CHECK(back.seed == 7);
  CHECK(back.variant == Variant::sgqn);

  CHECK_THROWS_AS(load_config((dir / "missing.txt").string()), std::runtime_error);
  fs::remove_all(dir);
}
