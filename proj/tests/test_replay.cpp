#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "sgqn/replay.hpp"

using namespace sgqn;

namespace {

// Observations whose every pixel encodes the transition id, on the 8-bit
// grid so storage round-trips exactly.
Tensor<float> tagged_obs(int tag, const std::vector<int>& shape) {
  Tensor<float> t(shape);
  t.fill(float(tag) / 255.0f);
  return t;
}

int tag_of(const Batch<float>& b, int row, size_t obs_numel) {
  return int(std::lround(double(b.obs.data[size_t(row) * obs_numel]) * 255.0));
}

}  // namespace

TEST_CASE("push grows size until capacity, then evicts oldest") {
  const std::vector<int> shape = {3, 4, 4};
  ReplayBuffer<float> buf(shape, 2, 2);
  CHECK(buf.size() == 0);
  CHECK(buf.capacity() == 2);

  buf.push(tagged_obs(1, shape), {0.0, 0.0}, 0.1, tagged_obs(1, shape), false);
  CHECK(buf.size() == 1);
  buf.push(tagged_obs(2, shape), {0.0, 0.0}, 0.2, tagged_obs(2, shape), false);
  CHECK(buf.size() == 2);
  buf.push(tagged_obs(3, shape), {0.0, 0.0}, 0.3, tagged_obs(3, shape), false);
  CHECK(buf.size() == 2);

  // capacity 2 after 3 pushes: only items 2 and 3 remain
  Rng rng(0);
  std::set<int> seen;
  for (int i = 0; i < 64; ++i) {
    auto b = buf.sample(1, rng);
    seen.insert(tag_of(b, 0, 48));
  }
  CHECK(seen == std::set<int>{2, 3});
}

TEST_CASE("single stored transition round-trips through sample") {
  const std::vector<int> shape = {3, 2, 2};
  ReplayBuffer<float> buf(shape, 2, 16);
  auto s = tagged_obs(10, shape);
  auto sn = tagged_obs(20, shape);
  buf.push(s, {0.25, -0.5}, 1.5, sn, true);

  Rng rng(3);
  auto b = buf.sample(1, rng);
  REQUIRE(b.obs.shape == std::vector<int>{1, 3, 2, 2});
  REQUIRE(b.actions.shape == std::vector<int>{1, 2});
  CHECK(b.obs.data == s.data);
  CHECK(b.next_obs.data == sn.data);
  CHECK(b.actions.data[0] == 0.25f);
  CHECK(b.actions.data[1] == -0.5f);
  CHECK(b.rewards.data[0] == 1.5f);
  CHECK(b.dones.data[0] == 1.0f);
}

TEST_CASE("sampling is deterministic given rng state") {
  const std::vector<int> shape = {3, 4, 4};
  ReplayBuffer<float> buf(shape, 1, 32);
  for (int i = 0; i < 10; ++i)
    buf.push(tagged_obs(i, shape), {double(i) / 10.0}, double(i),
             tagged_obs(i + 100, shape), i % 2 == 0);

  Rng a(42), b(42);
  auto ba = buf.sample(6, a);
  auto bb = buf.sample(6, b);
  CHECK(ba.obs.data == bb.obs.data);
  CHECK(ba.next_obs.data == bb.next_obs.data);
  CHECK(ba.actions.data == bb.actions.data);
  CHECK(ba.rewards.data == bb.rewards.data);
  CHECK(ba.dones.data == bb.dones.data);

  Rng c(43);
  auto bc = buf.sample(6, c);
  CHECK(ba.obs.data != bc.obs.data);
}

TEST_CASE("sample support is exactly the stored items for k <= 8") {
  const std::vector<int> shape = {3, 2, 2};
  for (int k = 1; k <= 8; ++k) {
    ReplayBuffer<float> buf(shape, 1, 8);
    for (int i = 0; i < k; ++i)
      buf.push(tagged_obs(i + 1, shape), {0.0}, 0.0, tagged_obs(i + 1, shape),
               false);

    Rng rng(uint64_t(k) * 7 + 1);
    std::set<int> seen;
    // 512 draws make missing one of <= 8 uniform outcomes astronomically
    // unlikely (probability < 8 * (7/8)^512)
    for (int i = 0; i < 512; ++i) {
      auto b = buf.sample(1, rng);
      const int tag = tag_of(b, 0, 12);
      CHECK(tag >= 1);
      CHECK(tag <= k);
      seen.insert(tag);
    }
    CHECK(int(seen.size()) == k);
  }
}

TEST_CASE("sampling with replacement can repeat items within a batch") {
  const std::vector<int> shape = {3, 2, 2};
  ReplayBuffer<float> buf(shape, 1, 4);
  buf.push(tagged_obs(1, shape), {0.0}, 0.0, tagged_obs(1, shape), false);
  buf.push(tagged_obs(2, shape), {0.0}, 0.0, tagged_obs(2, shape), false);

  Rng rng(5);
  bool repeated = false;
  std::set<int> seen;
  for (int trial = 0; trial < 64; ++trial) {
    auto b = buf.sample(2, rng);
    const int t0 = tag_of(b, 0, 12);
    const int t1 = tag_of(b, 1, 12);
    seen.insert(t0);
    seen.insert(t1);
    if (t0 == t1) repeated = true;
  }
  CHECK(repeated);  // without replacement a 2-of-2 batch could never repeat
  CHECK(seen == std::set<int>{1, 2});
}

TEST_CASE("underfull buffer and invalid arguments are rejected") {
  const std::vector<int> shape = {3, 2, 2};
  ReplayBuffer<float> buf(shape, 1, 8);
  Rng rng(0);
  CHECK_THROWS_AS(buf.sample(1, rng), std::invalid_argument);
  buf.push(tagged_obs(1, shape), {0.0}, 0.0, tagged_obs(1, shape), false);
  CHECK_THROWS_AS(buf.sample(2, rng), std::invalid_argument);
  CHECK_THROWS_AS(buf.sample(0, rng), std::invalid_argument);

  CHECK_THROWS_AS(buf.push(tagged_obs(1, {3, 2, 3}), {0.0}, 0.0,
                           tagged_obs(1, shape), false),
                  std::invalid_argument);
  CHECK_THROWS_AS(buf.push(tagged_obs(1, shape), {0.0, 0.0}, 0.0,
                           tagged_obs(1, shape), false),
                  std::invalid_argument);
  CHECK_THROWS_AS(buf.push(tagged_obs(1, shape), {0.0},
                           std::numeric_limits<double>::infinity(),
                           tagged_obs(1, shape), false),
                  std::invalid_argument);

  CHECK_THROWS_AS(ReplayBuffer<float>({3, 2}, 1, 8), std::invalid_argument);
  CHECK_THROWS_AS(ReplayBuffer<float>(shape, 0, 8), std::invalid_argument);
  CHECK_THROWS_AS(ReplayBuffer<float>(shape, 1, 0), std::invalid_argument);
}

TEST_CASE("8-bit quantization round-trips grid values and clamps the rest") {
  const std::vector<int> shape = {3, 2, 2};
  ReplayBuffer<float> buf(shape, 1, 4);

  // values already on the k/255 grid survive exactly
  Tensor<float> grid(shape);
  for (size_t i = 0; i < grid.data.size(); ++i)
    grid.data[i] = float(i * 20 % 256) / 255.0f;
  buf.push(grid, {0.0}, 0.0, grid, false);

  Rng rng(1);
  auto b = buf.sample(1, rng);
  CHECK(b.obs.data == grid.data);
  CHECK(b.next_obs.data == grid.data);

  // off-grid and out-of-range values land on the nearest grid point in [0,1]
  Tensor<float> rough(shape);
  rough.fill(0.5004f);  // nearest level is 128/255
  rough.data[0] = -0.25f;
  rough.data[1] = 1.75f;
  ReplayBuffer<float> buf2(shape, 1, 4);
  buf2.push(rough, {0.0}, 0.0, rough, false);
  auto b2 = buf2.sample(1, rng);
  CHECK(b2.obs.data[0] == 0.0f);
  CHECK(b2.obs.data[1] == 1.0f);
  for (size_t i = 2; i < b2.obs.data.size(); ++i)
    CHECK(b2.obs.data[i] == doctest::Approx(128.0 / 255.0).epsilon(1e-6));

  // quantization error is bounded by half a level
  Rng noise(9);
  Tensor<float> rand(shape);
  for (auto& v : rand.data) v = float(noise.uniform());
  ReplayBuffer<float> buf3(shape, 1, 4);
  buf3.push(rand, {0.0}, 0.0, rand, false);
  auto b3 = buf3.sample(1, rng);
  for (size_t i = 0; i < rand.data.size(); ++i)
    CHECK(std::abs(double(b3.obs.data[i]) - double(rand.data[i])) <=
          0.5 / 255.0 + 1e-7);
}
