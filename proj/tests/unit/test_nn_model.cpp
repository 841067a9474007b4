#include <cmath>
#include <random>

#include "attngan/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace attngan;
using attngan::testing::random_tensor;

namespace {

// Independent parameter-count oracle built from the layer list.
std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k) { return out * in * k * k + out; }
std::int64_t norm_params(std::int64_t c) { return 2 * c; }

std::int64_t generator_params(const ModelConfig& c) {
  const auto b = c.base_channels;
  std::int64_t n = 0;
  n += conv_params(3, b, 7) + norm_params(b);
  n += conv_params(b, 2 * b, 3) + norm_params(2 * b);
  n += conv_params(2 * b, 4 * b, 3) + norm_params(4 * b);
  n += c.residual_blocks * 2 * (conv_params(4 * b, 4 * b, 3) + norm_params(4 * b));
  n += conv_params(4 * b, 2 * b, 3) + norm_params(2 * b);
  n += conv_params(2 * b, b, 3) + norm_params(b);
  n += conv_params(b, c.n_masks, 7) + conv_params(b, 3 * (c.n_masks - 1), 7);
  return n;
}

std::int64_t discriminator_params(const ModelConfig& c, std::int64_t in) {
  std::int64_t n = 0;
  for (std::int64_t i = 0; i + 1 < c.discriminator_layers; ++i) {
    const auto out = c.base_channels * (1 << std::min<std::int64_t>(i, 3));
    n += conv_params(in, out, 4) + (i > 0 ? norm_params(out) : 0);
    in = out;
  }
  return n + conv_params(in, 1, 4);
}

ModelConfig small_config() {
  ModelConfig c;
  c.image_size = 16;
  c.base_channels = 4;
  c.residual_blocks = 2;
  c.discriminator_layers = 3;
  return c;
}

}  // namespace

TEST_CASE("default parameter counts") {
  const ModelConfig c;
  CHECK(generator_params(c) == 349285);
  CHECK(discriminator_params(c, 3) == 43057);
  CHECK(discriminator_params(c, 4) == 43313);
  CycleModel<float> model(c);
  const auto& p = model.parameters();
  CHECK(p.parameter_count("gen_xy.") == 349285);
  CHECK(p.parameter_count("gen_yx.") == 349285);
  CHECK(p.parameter_count("d_x.") == 43057);
  CHECK(p.parameter_count("d_ya.") == 43313);
  CHECK(p.parameter_count() == 2 * 349285 + 2 * 43057 + 2 * 43313);
  CHECK(p.parameter_count() == 871310);
}

TEST_CASE("parameter counts agree with the oracle on other configs") {
  for (std::int64_t masks : {2, 3, 5}) {
    auto c = small_config();
    c.n_masks = masks;
    c.mask_combine = masks == 3 ? MaskCombine::multiply : MaskCombine::concat;
    CycleModel<double> model(c);
    const std::int64_t att_in = c.mask_combine == MaskCombine::concat ? 4 : 3;
    CHECK(model.parameters().parameter_count("gen_yx.") == generator_params(c));
    CHECK(model.parameters().parameter_count("d_y.") == discriminator_params(c, 3));
    CHECK(model.parameters().parameter_count("d_xa.") == discriminator_params(c, att_in));
  }
}

TEST_CASE("registry rejects duplicates and unknown names") {
  ParameterRegistry<float> r;
  r.add("a.weight", {2, 2}, ParamRole::weight);
  CHECK_THROWS_AS(r.add("a.weight", {1}, ParamRole::bias), ConfigError);
  CHECK_THROWS_AS(r.at("missing"), LookupError);
  CHECK(r.at("a.weight").requires_grad());
  r.set_requires_grad("a.", false);
  CHECK_FALSE(r.at("a.weight").requires_grad());
}

TEST_CASE("initialization is seeded: weights ~ N(0, 0.02), gains 1, biases 0") {
  CycleModel<float> a(small_config());
  CycleModel<float> b(small_config());
  init_parameters(a.parameters(), 9);
  init_parameters(b.parameters(), 9);
  double sum = 0.0;
  double sq = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& ea = a.parameters().entries()[i];
    const auto& eb = b.parameters().entries()[i];
    CHECK(bitwise_equal(ea.tensor, eb.tensor));
    for (float v : ea.tensor.data()) {
      if (ea.role == ParamRole::gain) {
        CHECK(v == 1.0f);
      } else if (ea.role == ParamRole::bias) {
        CHECK(v == 0.0f);
      } else {
        sum += v;
        sq += static_cast<double>(v) * v;
        ++n;
      }
    }
  }
  CHECK(std::abs(sum / n) < 0.002);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.image_size = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.n_masks = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.image_size = 12;  // multiple of 4 but not of 2^(4-1)
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.discriminator_layers = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("model config round-trips through JSON") {
  auto c = small_config();
  c.mask_combine = MaskCombine::multiply;
  const nlohmann::json j = c;
  const auto back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  auto bad = j;
  bad["mask_combine"] = "sum";
  CHECK_THROWS_AS(bad.get<ModelConfig>(), ConfigError);
}

TEST_CASE("generator output shapes and per-pixel mask normalization") {
  auto c = small_config();
  c.n_masks = 3;
  CycleModel<float> model(c);
  init_parameters(model.parameters(), 1);
  std::mt19937_64 rng(4);
  const auto x = random_tensor<float>(rng, {2, 3, 16, 16});
  const auto out = model.gen_xy()(x);
  CHECK(out.attention.shape() == Shape{2, 3, 16, 16});
  CHECK(out.content.shape() == Shape{2, 6, 16, 16});
  CHECK(out.fused.shape() == Shape{2, 3, 16, 16});
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t p = 0; p < 256; ++p) {
      double s = 0.0;
      for (std::int64_t k = 0; k < 3; ++k) {
        s += out.attention.data()[(n * 3 + k) * 256 + p];
      }
      CHECK(std::abs(s - 1.0) <= 1e-5);
    }
  }
  for (float v : out.content.data()) {
    CHECK(std::abs(v) <= 1.0f);
  }
  const auto fg = foreground_mask(out);
  CHECK(fg.shape() == Shape{2, 1, 16, 16});
  CHECK_THROWS_AS(model.gen_xy()(Tensor::zeros({1, 3, 8, 8})), ShapeError);
}

TEST_CASE("discriminator logit map is H / 2^(layers-1)") {
  ModelConfig c;
  c.image_size = 32;
  c.base_channels = 4;
  CycleModel<float> model(c);
  init_parameters(model.parameters(), 2);
  const auto logits = model.d_x()(Tensor::zeros({1, 3, 32, 32}));
  CHECK(logits.shape() == Shape{1, 1, 4, 4});
  const auto att = model.d_xa()(Tensor::zeros({1, 3, 32, 32}), Tensor::zeros({1, 1, 32, 32}));
  CHECK(att.shape() == Shape{1, 1, 4, 4});
  CHECK_THROWS_AS(model.d_xa()(Tensor::zeros({1, 3, 32, 32}), Tensor::zeros({1, 1, 16, 16})), ShapeError);
}

TEST_CASE("residual block keeps its width") {
  ParameterRegistry<float> r;
  const auto block = ResidualBlock<float>::create(r, "res", 4);
  init_parameters(r, 3);
  CHECK(block.forward(Tensor::zeros({1, 4, 5, 5})).shape() == Shape{1, 4, 5, 5});
  CHECK_THROWS_AS(block.forward(Tensor::zeros({1, 3, 5, 5})), ShapeError);
}

TEST_CASE("generator and discriminator parameter names are told apart") {
  CHECK(is_generator_parameter("gen_xy.enc1.weight"));
  CHECK(is_generator_parameter("gen_yx.content.bias"));
  CHECK_FALSE(is_generator_parameter("d_x.layer0.weight"));
  CHECK_FALSE(is_generator_parameter("d_ya.layer1_norm.gain"));
}
