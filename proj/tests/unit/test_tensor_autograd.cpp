#include "attngan/autograd.hpp"
#include "attngan/ops.hpp"
#include "attngan/tensor.hpp"
#include "doctest.h"

using namespace attngan;

TEST_CASE("shape_numel multiplies dims and rejects empty or non-positive shapes") {
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK_THROWS_AS(shape_numel({}), ShapeError);
  CHECK_THROWS_AS(shape_numel({2, 0}), ShapeError);
  CHECK_THROWS_AS(shape_numel({-1}), ShapeError);
}

TEST_CASE("tensor construction checks the element count") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  const Tensor t({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  CHECK(t.numel() == 4);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 2);
  CHECK_THROWS_AS(t.item(), ContractError);
  CHECK(Tensor::scalar(2.5f).item() == 2.5f);
}

TEST_CASE("copies share storage, clone does not") {
  Tensor a = Tensor::zeros({3});
  Tensor b = a;
  Tensor c = a.clone();
  b.mutable_data()[0] = 7.0f;
  CHECK(a.data()[0] == 7.0f);
  CHECK(c.data()[0] == 0.0f);
  CHECK(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, c));
}

TEST_CASE("tensor_cast converts element type") {
  const Tensor t({2}, {0.5f, -1.25f});
  const auto d = tensor_cast<double>(t);
  CHECK(d.data()[0] == 0.5);
  CHECK(d.data()[1] == -1.25);
}

TEST_CASE("gradient of mean(square(w)) at w = 3 is 6") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const auto w = Tensor64::full({1}, 3.0, true);
  const auto loss = mean(square(w));
  const auto grads = backward(tape, loss);
  CHECK(grads.at(w).item() == doctest::Approx(6.0));
}

TEST_CASE("mean gradient spreads 1/n over every element") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const auto x = Tensor64::full({2, 2}, 1.0, true);
  const auto grads = backward(tape, mean(x));
  for (double g : grads.at(x).data()) {
    CHECK(g == doctest::Approx(0.25));
  }
}

TEST_CASE("a tensor used twice accumulates both contributions") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const Tensor64 x({2}, {1.5, -2.0}, true);
  const auto grads = backward(tape, mean(mul(x, x)));
  CHECK(grads.at(x).data()[0] == doctest::Approx(1.5));
  CHECK(grads.at(x).data()[1] == doctest::Approx(-2.0));
}

TEST_CASE("backward rejects non-scalar losses and a second sweep") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const auto x = Tensor64::full({3}, 1.0, true);
  const auto y = square(x);
  CHECK_THROWS_AS(backward(tape, y), ContractError);
  const auto loss = mean(y);
  backward(tape, loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(backward(tape, loss), StateError);
  CHECK_THROWS_AS(square(x), StateError);
}

TEST_CASE("a loss that needs no gradient yields an empty map") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const auto x = Tensor64::full({3}, 1.0);
  const auto grads = backward(tape, mean(x));
  CHECK(grads.size() == 0);
}

TEST_CASE("leaves without a path to the loss receive zero gradients") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const auto a = Tensor64::full({2}, 1.0, true);
  const auto b = Tensor64::full({2}, 2.0, true);
  [[maybe_unused]] const auto unused = square(a);
  const auto grads = backward(tape, mean(b));
  REQUIRE(grads.contains(a));
  for (double g : grads.at(a).data()) {
    CHECK(g == 0.0);
  }
}

TEST_CASE("detach cuts the graph") {
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  const auto x = Tensor64::full({1}, 2.0, true);
  const auto y = square(x);
  const auto z = mul(y.detach(), x);
  const auto grads = backward(tape, mean(z));
  CHECK(grads.at(x).item() == doctest::Approx(4.0));  // y treated as the constant 4
}

TEST_CASE("ops outside any tape record nothing") {
  const auto x = Tensor64::full({2}, 1.0, true);
  const auto y = square(x);
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("nested tape scopes restore the previous tape") {
  Tape<float> outer;
  TapeScope<float> a(&outer);
  {
    TapeScope<float> off(nullptr);
    CHECK(active_tape<float>() == nullptr);
  }
  CHECK(active_tape<float>() == &outer);
}

TEST_CASE("requires_grad can only be toggled on leaves") {
  Tape<float> tape;
  TapeScope<float> scope(&tape);
  auto x = Tensor::full({1}, 1.0f, true);
  auto y = square(x);
  CHECK_THROWS_AS(y.set_requires_grad(false), StateError);
  x.set_requires_grad(false);
  CHECK_FALSE(x.requires_grad());
}

TEST_CASE("backward without an active tape is a state error") {
  const auto x = Tensor::full({1}, 1.0f, true);
  CHECK_THROWS_AS(backward(x), StateError);
}
