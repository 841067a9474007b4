#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "attngan/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace attngan;
using attngan::testing::TempDir;
using attngan::testing::random_tensor;

namespace {

TrainConfig tiny_config(std::int64_t epochs = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.model.image_size = 16;
  c.model.base_channels = 4;
  c.model.residual_blocks = 1;
  c.model.discriminator_layers = 3;
  return c;
}

std::vector<ImagePair> tiny_pairs(std::int64_t n, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::vector<ImagePair> pairs;
  for (std::int64_t i = 0; i < n; ++i) {
    pairs.push_back({"p" + std::to_string(i), random_tensor<float>(rng, {3, 16, 16}),
                     random_tensor<float>(rng, {3, 16, 16}, -0.5, 0.5)});
  }
  return pairs;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::uint8_t> with_header(const std::vector<std::uint8_t>& bytes, const nlohmann::json& header,
                                      std::size_t old_len) {
  const auto text = header.dump();
  std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 5);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  }
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 9 + static_cast<std::ptrdiff_t>(old_len), bytes.end());
  return out;
}

std::size_t header_length(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) {
    len |= static_cast<std::uint32_t>(bytes[5 + i]) << (8 * i);
  }
  return len;
}

}  // namespace

TEST_CASE("learning rate is flat then decays linearly to zero") {
  TrainConfig c;
  CHECK(c.effective_decay_start() == 15);
  CHECK(lr_at(0, c) == 2e-4);
  CHECK(lr_at(15, c) == doctest::Approx(2e-4));
  CHECK(lr_at(22, c) == doctest::Approx(1.0667e-4).epsilon(1e-4));
  CHECK(lr_at(29, c) == doctest::Approx(2e-4 / 15));
  CHECK_THROWS_AS(lr_at(30, c), BoundsError);
  CHECK_THROWS_AS(lr_at(-1, c), BoundsError);
  for (std::int64_t e = 1; e < c.epochs; ++e) {
    CHECK(lr_at(e, c) <= lr_at(e - 1, c));
  }
  c.decay_start = 30;
  CHECK(lr_at(29, c) == 2e-4);
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.decay_start = 31;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config(4);
  const nlohmann::json j = c;
  CHECK(j.at("decay_start").is_null());
  CHECK(nlohmann::json(j.get<TrainConfig>()) == j);
  CHECK(c.checkpoint_interval() == 1);
  c.epochs = 30;
  CHECK(c.checkpoint_interval() == 3);
}

TEST_CASE("first Adam step moves each weight by about lr against its gradient sign") {
  Tape<float> tape;
  const Tensor w({3}, {1.0f, -2.0f, 0.5f}, true);
  Adam adam({w}, 0.5, 0.999, 1e-8);
  GradientMap<float> grads;
  {
    TapeScope<float> scope(&tape);
    grads = backward(tape, mean(mul(Tensor({3}, {3.0f, -1.0f, 0.0f}), w)));
  }
  adam.step(grads, 0.1);
  CHECK(adam.t() == 1);
  CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.data()[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(w.data()[2] == 0.5f);
  // m = (1 − β1)·g
  CHECK(adam.first_moments()[0][0] == doctest::Approx(0.5 * 1.0));
}

TEST_CASE("stack_images builds a batch") {
  const Tensor a = Tensor::full({3, 2, 2}, 1.0f);
  const Tensor b = Tensor::full({3, 2, 2}, 2.0f);
  const Tensor items[] = {a, b};
  const auto s = stack_images(items);
  CHECK(s.shape() == Shape{2, 3, 2, 2});
  CHECK(s.data()[12] == 2.0f);
  const Tensor bad[] = {a, Tensor::zeros({3, 4, 4})};
  CHECK_THROWS_AS(stack_images(bad), ShapeError);
}

TEST_CASE("a train step reports all terms and leaves discriminators untouched by the generator update") {
  auto state = TrainState::create(tiny_config());
  const auto pairs = tiny_pairs(1);
  const auto x = stack_images(std::vector<Tensor>{pairs[0].cloudy});
  const auto y = stack_images(std::vector<Tensor>{pairs[0].clean});
  const auto result = train_step(state, x, y, 2e-4);
  const auto j = result.report.to_json();
  for (const char* key : {"adv_xy", "adv_yx", "att_adv_xy", "att_adv_yx", "cyc_x", "cyc_y", "pix_xy", "pix_yx",
                          "d_x", "d_y", "d_xa", "d_ya", "g_total", "d_total"}) {
    CAPTURE(key);
    REQUIRE(j.contains(key));
    CHECK(std::isfinite(j.at(key).get<double>()));
  }
  CHECK(state.gen_optimizer.t() == 1);
  CHECK(state.disc_optimizer.t() == 1);
}

TEST_CASE("a NaN input is reported as a numeric error") {
  auto state = TrainState::create(tiny_config());
  auto x = Tensor::zeros({1, 3, 16, 16});
  x.mutable_data()[5] = std::nanf("");
  CHECK_THROWS_WITH_AS(train_step(state, x, Tensor::zeros({1, 3, 16, 16}), 2e-4),
                       doctest::Contains("non-finite loss term"), NumericError);
}

TEST_CASE("pixel-only training lowers the pixel loss at every one of the first 10 steps") {
  auto c = tiny_config();
  c.weights = LossWeights{0.0, 0.0, 0.0, 1.0};
  auto state = TrainState::create(c);
  const auto pairs = tiny_pairs(1, 11);
  const auto x = stack_images(std::vector<Tensor>{pairs[0].cloudy});
  const auto y = stack_images(std::vector<Tensor>{pairs[0].clean});
  double prev = INFINITY;
  for (int i = 0; i < 10; ++i) {
    const auto j = train_step(state, x, y, 2e-4).report.to_json();
    const double pix = j.at("pix_xy").get<double>();
    CHECK(pix < prev);
    CHECK(j.at("adv_xy").is_null());
    prev = pix;
  }
}

TEST_CASE("three epochs on eight pairs: 24 log lines, per-epoch checkpoints, metrics") {
  TempDir dir("train");
  auto state = TrainState::create(tiny_config(3));
  int epochs_seen = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const TrainState&) { ++epochs_seen; };
  train(state, tiny_pairs(8), dir.path(), hooks);
  CHECK(epochs_seen == 3);
  CHECK(state.step == 24);
  CHECK(state.epoch == 3);
  std::ifstream log(dir / kTrainLogFile);
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step").get<std::int64_t>() == lines + 1);
    CHECK(j.at("losses").contains("g_total"));
    ++lines;
  }
  CHECK(lines == 24);
  for (std::int64_t e = 1; e <= 3; ++e) {
    CHECK(std::filesystem::exists(dir / checkpoint_name(e)));
  }
  CHECK(std::filesystem::exists(dir / kFinalCheckpoint));
  REQUIRE(state.metrics.size() == 3);
  CHECK(state.metrics[2].at("mean_losses").contains("pix_xy"));
}

TEST_CASE("training rejects an empty set and wrong image sizes") {
  TempDir dir("reject");
  auto state = TrainState::create(tiny_config());
  CHECK_THROWS_AS(train(state, std::vector<ImagePair>{}, dir.path()), ConfigError);
  std::mt19937_64 rng(1);
  std::vector<ImagePair> wrong{{"w", random_tensor<float>(rng, {3, 8, 8}), random_tensor<float>(rng, {3, 8, 8})}};
  CHECK_THROWS_AS(train(state, wrong, dir.path()), ConfigError);
}

TEST_CASE("identical seeds give bitwise-identical checkpoints") {
  TempDir a("det_a");
  TempDir b("det_b");
  auto sa = TrainState::create(tiny_config(2));
  auto sb = TrainState::create(tiny_config(2));
  train(sa, tiny_pairs(3), a.path());
  train(sb, tiny_pairs(3), b.path());
  CHECK(read_bytes(a / kFinalCheckpoint) == read_bytes(b / kFinalCheckpoint));
  auto sc = TrainState::create([] {
    auto c = tiny_config(2);
    c.seed = 43;
    return c;
  }());
  TempDir c("det_c");
  train(sc, tiny_pairs(3), c.path());
  CHECK(read_bytes(a / kFinalCheckpoint) != read_bytes(c / kFinalCheckpoint));
}

TEST_CASE("checkpoint round-trip restores state and inference exactly") {
  TempDir dir("roundtrip");
  auto state = TrainState::create(tiny_config(2));
  train(state, tiny_pairs(2), dir.path());
  const auto bytes = serialize_checkpoint(state);
  CHECK(std::memcmp(bytes.data(), "AGCR1", 5) == 0);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.epoch == state.epoch);
  CHECK(back.step == state.step);
  CHECK(back.rng == state.rng);
  CHECK(back.gen_optimizer.t() == state.gen_optimizer.t());
  CHECK(back.gen_optimizer.second_moments() == state.gen_optimizer.second_moments());
  CHECK(back.metrics == state.metrics);

  const auto loaded = load_checkpoint(dir / kFinalCheckpoint);
  const auto x = stack_images(std::vector<Tensor>{tiny_pairs(1, 99)[0].cloudy});
  const auto y1 = state.model->gen_xy()(x);
  const auto y2 = loaded.model->gen_xy()(x);
  CHECK(bitwise_equal(y1.fused, y2.fused));
  CHECK(bitwise_equal(y1.attention, y2.attention));
}

TEST_CASE("damaged checkpoints are rejected with a byte offset") {
  auto state = TrainState::create(tiny_config());
  const auto bytes = serialize_checkpoint(state);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad_magic), doctest::Contains("at byte offset 0"), FormatError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{7}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(truncated), doctest::Contains("byte offset"), FormatError);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(trailing), FormatError);

  const auto len = header_length(bytes);
  auto header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + static_cast<std::ptrdiff_t>(len));
  auto reshaped = header;
  reshaped["tensors"][0]["shape"] = {1, 2, 3, 4};
  CHECK_THROWS_AS(deserialize_checkpoint(with_header(bytes, reshaped, len)), FormatError);
  auto other_model = header;
  other_model["model"]["base_channels"] = 8;
  CHECK_THROWS_AS(deserialize_checkpoint(with_header(bytes, other_model, len)), FormatError);
  CHECK_NOTHROW(deserialize_checkpoint(with_header(bytes, header, len)));
}

TEST_CASE("resuming from a mid-run checkpoint reproduces the uninterrupted run") {
  TempDir full_dir("resume_full");
  TempDir rest_dir("resume_rest");
  const auto pairs = tiny_pairs(2);
  auto full = TrainState::create(tiny_config(2));
  train(full, pairs, full_dir.path());
  auto mid = load_checkpoint(full_dir / checkpoint_name(1));
  CHECK(mid.epoch == 1);
  train(mid, pairs, rest_dir.path());
  CHECK(serialize_checkpoint(mid) == serialize_checkpoint(full));
}
