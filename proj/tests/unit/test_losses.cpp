#include <cmath>

#include "attngan/losses.hpp"
#include "doctest.h"

using namespace attngan;

TEST_CASE("least-squares generator objective") {
  CHECK(adversarial_g(Tensor::zeros({1, 1, 2, 2})).item() == 1.0f);
  CHECK(adversarial_g(Tensor::full({1, 1, 2, 2}, 1.0f)).item() == 0.0f);
  CHECK(adversarial_g(Tensor({1, 1, 1, 2}, {0.0f, 3.0f})).item() == doctest::Approx(2.5));
}

TEST_CASE("least-squares discriminator objective") {
  const auto ones = Tensor::full({1, 1, 2, 2}, 1.0f);
  const auto zeros = Tensor::zeros({1, 1, 2, 2});
  CHECK(adversarial_d(ones, zeros).item() == 0.0f);
  CHECK(adversarial_d(zeros, ones).item() == 1.0f);
  CHECK(adversarial_d(Tensor::full({1}, 0.5f), Tensor::full({1}, 0.5f)).item() == doctest::Approx(0.25));
}

TEST_CASE("cycle and pixel losses are mean absolute differences") {
  const Tensor a({1, 1, 1, 4}, {0.0f, 1.0f, -1.0f, 0.5f});
  const Tensor b({1, 1, 1, 4}, {0.5f, 1.0f, 1.0f, 0.0f});
  CHECK(cycle_loss(a, b).item() == doctest::Approx((0.5 + 0 + 2 + 0.5) / 4));
  CHECK(pixel_loss(a, b).item() == doctest::Approx(0.75));
  CHECK(pixel_loss(a, a).item() == 0.0f);
  CHECK_THROWS_AS(pixel_loss(a, Tensor::zeros({1, 1, 2, 2})), ShapeError);
}

TEST_CASE("weights validate and round-trip") {
  LossWeights w;
  CHECK(w.adversarial == 1.0);
  CHECK(w.attention_adversarial == 1.0);
  CHECK(w.cycle == 10.0);
  CHECK(w.pixel == 1.0);
  w.cycle = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  const LossWeights v{0.5, 0.0, 2.0, 3.0};
  CHECK(nlohmann::json(nlohmann::json(v).get<LossWeights>()) == nlohmann::json(v));
}

namespace {

CyclePass<float> pass_with(bool cycles) {
  CyclePass<float> p;
  p.x = Tensor::full({1, 3, 2, 2}, 0.5f);
  p.y = Tensor::full({1, 3, 2, 2}, -0.5f);
  p.xy.fused = Tensor::full({1, 3, 2, 2}, 0.0f);
  p.yx.fused = Tensor::full({1, 3, 2, 2}, 0.25f);
  if (cycles) {
    p.x_cycle = GeneratorOutput<float>{{}, {}, Tensor::full({1, 3, 2, 2}, 0.25f)};
    p.y_cycle = GeneratorOutput<float>{{}, {}, Tensor::full({1, 3, 2, 2}, -1.0f)};
  }
  return p;
}

FakeLogits<float> logits_all() {
  FakeLogits<float> l;
  l.d_y = Tensor::full({1, 1, 2, 2}, 0.0f);    // adv 1
  l.d_x = Tensor::full({1, 1, 2, 2}, 0.5f);    // adv 0.25
  l.d_ya = Tensor::full({1, 1, 2, 2}, 2.0f);   // adv 1
  l.d_xa = Tensor::full({1, 1, 2, 2}, 1.0f);   // adv 0
  return l;
}

const LossTerm& term(const std::vector<LossTerm>& terms, const std::string& name) {
  for (const auto& t : terms) {
    if (t.name == name) {
      return t;
    }
  }
  FAIL("missing term " << name);
  throw;
}

}  // namespace

TEST_CASE("generator total is the weighted sum of all eight terms") {
  const LossWeights w{1.0, 2.0, 10.0, 3.0};
  const auto obj = total_generator_loss(pass_with(true), logits_all(), w);
  // adv: 1 + 0.25; att: 1 + 0; cyc: |0.5-0.25| + |-0.5+1| = 0.25 + 0.5; pix: |0+0.5| + |0.25-0.5| = 0.5 + 0.25
  const double expected = 1.0 * 1.25 + 2.0 * 1.0 + 10.0 * 0.75 + 3.0 * 0.75;
  CHECK(obj.total_value == doctest::Approx(expected));
  CHECK(obj.total.item() == doctest::Approx(expected));
  CHECK(obj.terms.size() == 8);
  CHECK(*term(obj.terms, "cyc_y").value == doctest::Approx(0.5));
  CHECK(*term(obj.terms, "att_adv_yx").value == doctest::Approx(0.0));
}

TEST_CASE("zero-weight terms are skipped and missing inputs are reported") {
  const LossWeights pix_only{0.0, 0.0, 0.0, 1.0};
  const auto obj = total_generator_loss(pass_with(false), FakeLogits<float>{}, pix_only);
  CHECK_FALSE(term(obj.terms, "adv_xy").value.has_value());
  CHECK_FALSE(term(obj.terms, "cyc_x").value.has_value());
  CHECK(obj.total_value == doctest::Approx(0.75));

  const LossWeights needs_cycles{0.0, 0.0, 10.0, 1.0};
  CHECK_THROWS_AS(total_generator_loss(pass_with(false), FakeLogits<float>{}, needs_cycles), ContractError);
  CHECK_THROWS_AS(total_generator_loss(pass_with(true), FakeLogits<float>{}, LossWeights{}), ContractError);
}

TEST_CASE("discriminator total over the four discriminators") {
  const auto ones = Tensor::full({1, 1, 2, 2}, 1.0f);
  const auto zeros = Tensor::zeros({1, 1, 2, 2});
  const DiscriminatorLogits<float> perfect{ones, zeros};
  const DiscriminatorLogits<float> fooled{zeros, ones};
  const LossWeights w{1.0, 0.5, 10.0, 1.0};
  const auto obj = total_discriminator_loss(perfect, fooled, fooled, perfect, w);
  CHECK(obj.total_value == doctest::Approx(1.0 * (0.0 + 1.0) + 0.5 * (1.0 + 0.0)));
  const auto none = total_discriminator_loss<float>({}, {}, {}, {}, LossWeights{0.0, 0.0, 1.0, 1.0});
  CHECK(none.total_value == 0.0);
  CHECK_THROWS_AS(total_discriminator_loss<float>({}, {}, {}, {}, w), ContractError);
}

TEST_CASE("loss report JSON is flat with null for skipped terms") {
  LossReport r;
  r.generator = {{"adv_xy", 0.0, std::nullopt}, {"pix_xy", 1.0, 0.5}};
  r.generator_total = 0.5;
  r.discriminator = {{"d_x", 0.0, std::nullopt}};
  const auto j = r.to_json();
  CHECK(j.at("adv_xy").is_null());
  CHECK(j.at("pix_xy").get<double>() == 0.5);
  CHECK(j.at("d_x").is_null());
  CHECK(j.at("g_total").get<double>() == 0.5);
  CHECK(j.at("d_total").get<double>() == 0.0);
}
