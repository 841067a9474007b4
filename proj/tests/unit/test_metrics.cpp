#include <cmath>
#include <random>

#include "attngan/metrics.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace attngan;
using attngan::testing::random_tensor;

namespace {

Image8 random_image(std::mt19937_64& rng, std::int64_t w, std::int64_t h) {
  Image8 img(w, h, 3);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& p : img.pixels) {
    p = static_cast<std::uint8_t>(u(rng));
  }
  return img;
}

// Direct windowed SSIM: every 8×8 window at stride 1, statistics recomputed
// from scratch per window, on BT.601 luma.
double ssim_oracle(const Image8& a, const Image8& b) {
  auto y = [](const Image8& img, std::int64_t r, std::int64_t c) {
    return 0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
  };
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  const int k = 8;
  double total = 0.0;
  int windows = 0;
  for (std::int64_t r0 = 0; r0 + k <= a.height; ++r0) {
    for (std::int64_t c0 = 0; c0 + k <= a.width; ++c0) {
      double ma = 0.0;
      double mb = 0.0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          ma += y(a, r0 + i, c0 + j);
          mb += y(b, r0 + i, c0 + j);
        }
      }
      ma /= k * k;
      mb /= k * k;
      double va = 0.0;
      double vb = 0.0;
      double cov = 0.0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double da = y(a, r0 + i, c0 + j) - ma;
          const double db = y(b, r0 + i, c0 + j) - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      }
      va /= k * k;
      vb /= k * k;
      cov /= k * k;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / windows;
}

}  // namespace

TEST_CASE("mse closed forms") {
  const Image8 black(4, 4, 3, 0);
  const Image8 white(4, 4, 3, 255);
  CHECK(mse(black, white) == 65025.0);
  Image8 half = black;
  for (std::size_t i = 0; i < half.pixels.size(); i += 2) {
    half.pixels[i] = 255;
  }
  CHECK(mse(black, half) == 32512.5);
  CHECK(mse(white, white) == 0.0);
  CHECK_THROWS_AS(mse(black, Image8(5, 4, 3)), ShapeError);
}

TEST_CASE("psnr closed forms and cap") {
  CHECK(psnr_from_mse(1.0) == doctest::Approx(48.1308).epsilon(1e-5));
  CHECK(std::abs(psnr_from_mse(1.0) - 48.13) <= 0.01);
  CHECK(psnr_from_mse(65025.0) == doctest::Approx(0.0).scale(1.0));
  CHECK(psnr_from_mse(0.0) == kPsnrCap);
  Image8 a(3, 3, 3, 100);
  CHECK(psnr(a, a) == 99.0);
  Image8 b = a;
  b.pixels[0] = 101;  // one channel off by one: mse = 1/27
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(255.0 * 255.0 * 27.0)));
}

TEST_CASE("tensor metrics denormalize to 8 bits first") {
  const auto a = Tensor::full({3, 8, 8}, -1.0f);
  const auto b = Tensor::full({3, 8, 8}, 1.0f);
  CHECK(mse(a, b) == 65025.0);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(ssim(a, a) == doctest::Approx(1.0));
}

TEST_CASE("ssim matches the direct windowed definition on 20 random pairs") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> side(8, 20);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = side(rng);
    const auto h = side(rng);
    const auto a = random_image(rng, w, h);
    auto b = a;
    // Correlated partner: noisy copy so SSIM spans more than the near-zero range.
    std::normal_distribution<double> noise(0.0, 10.0 + 10.0 * trial);
    for (auto& p : b.pixels) {
      p = static_cast<std::uint8_t>(std::clamp(std::lround(p + noise(rng)), 0L, 255L));
    }
    CAPTURE(trial);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-6);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("ssim properties") {
  std::mt19937_64 rng(6);
  const auto a = random_image(rng, 16, 16);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  // A fine checkerboard against its one-pixel shift is strongly anti-correlated.
  Image8 board(16, 16, 3);
  Image8 shifted(16, 16, 3);
  for (std::int64_t y = 0; y < 16; ++y) {
    for (std::int64_t x = 0; x < 16; ++x) {
      for (int c = 0; c < 3; ++c) {
        board.at(y, x, c) = ((x + y) % 2) ? 255 : 0;
        shifted.at(y, x, c) = ((x + y + 1) % 2) ? 255 : 0;
      }
    }
  }
  CHECK(ssim(board, shifted) < 0.1);
  CHECK_THROWS_AS(ssim(Image8(7, 7, 3), Image8(7, 7, 3)), ShapeError);
}

TEST_CASE("luma weights") {
  Image8 px(1, 1, 3);
  px.at(0, 0, 0) = 100;
  px.at(0, 0, 1) = 50;
  px.at(0, 0, 2) = 200;
  CHECK(luma(px)[0] == doctest::Approx(0.299 * 100 + 0.587 * 50 + 0.114 * 200));
}

TEST_CASE("summary uses population standard deviation") {
  const std::vector<ImageMetrics> rows{{"a", 1.0, 10.0, 0.5}, {"b", 3.0, 20.0, 0.7}};
  const auto s = summarize(rows);
  CHECK(s.count == 2);
  CHECK(s.mse_mean == 2.0);
  CHECK(s.mse_std == 1.0);
  CHECK(s.psnr_mean == 15.0);
  CHECK(s.psnr_std == 5.0);
  CHECK(s.ssim_mean == doctest::Approx(0.6));
  CHECK(s.ssim_std == doctest::Approx(0.1));
}

TEST_CASE("config hash is FNV-1a of the compact dump") {
  const nlohmann::json empty = nlohmann::json::object();
  // FNV-1a 64 of "{}"
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : std::string("{}")) {
    h = (h ^ c) * 0x100000001b3ULL;
  }
  char want[17];
  std::snprintf(want, sizeof want, "%016llx", static_cast<unsigned long long>(h));
  CHECK(config_hash(empty) == want);
  CHECK(config_hash({{"a", 1}}) != config_hash({{"a", 2}}));
}

TEST_CASE("grid tiles cells with white separators") {
  const Image8 cell(5, 4, 3, 10);
  const auto g = make_grid({{cell, cell, cell}, {cell, cell, cell}});
  CHECK(g.width == 3 * 5 + 2 * kGridSeparator);
  CHECK(g.height == 2 * 4 + kGridSeparator);
  CHECK(g.at(0, 0, 0) == 10);
  CHECK(g.at(0, 5, 1) == 255);
  CHECK(g.at(4, 0, 2) == 255);
  CHECK(g.at(6, 7, 0) == 10);
  CHECK_THROWS_AS(make_grid({{cell}, {cell, cell}}), ContractError);
}

TEST_CASE("heat map endpoints") {
  const auto h = heatmap(Tensor({1, 1, 2}, {0.0f, 1.0f}));
  CHECK(h.at(0, 0, 2) > h.at(0, 0, 0));  // cold is blue
  CHECK(h.at(0, 1, 0) > h.at(0, 1, 2));  // hot is red
}

TEST_CASE("evaluating a pass-through generator reproduces the baseline") {
  ModelConfig c;
  c.image_size = 16;
  c.base_channels = 4;
  c.residual_blocks = 1;
  c.discriminator_layers = 3;
  CycleModel<float> model(c);
  init_parameters(model.parameters(), 1);
  // Drive every pixel's attention onto the background mask.
  auto w = model.parameters().at("gen_xy.attention.weight");
  auto b = model.parameters().at("gen_xy.attention.bias");
  std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0f);
  for (std::int64_t k = 0; k < c.n_masks; ++k) {
    b.mutable_data()[k] = k + 1 == c.n_masks ? 100.0f : -100.0f;
  }
  std::mt19937_64 rng(2);
  std::vector<ImagePair> test;
  for (int i = 0; i < 3; ++i) {
    test.push_back({"t" + std::to_string(i), random_tensor<float>(rng, {3, 16, 16}),
                    random_tensor<float>(rng, {3, 16, 16})});
  }
  const auto out = translate(model, test[0].cloudy);
  CHECK(bitwise_equal(out.fused, test[0].cloudy.view_as({1, 3, 16, 16})));

  const auto ev = evaluate(model, test, "abc");
  CHECK(ev.report.split == std::vector<std::string>{"t0", "t1", "t2"});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ev.report.per_image[i].psnr_db == ev.report.baseline[i].psnr_db);
    CHECK(ev.report.per_image[i].ssim == ev.report.baseline[i].ssim);
  }
  CHECK(ev.grid.width == 4 * 16 + 3 * kGridSeparator);
  CHECK(ev.grid.height == 3 * 16 + 2 * kGridSeparator);

  const auto j = ev.report.to_json();
  CHECK(j.at("config_hash") == "abc");
  CHECK(j.at("per_image").size() == 3);
  CHECK(j.at("per_image")[0].contains("psnr_db"));
  CHECK(j.at("baseline").at("summary").at("count") == 3);
  CHECK(j.at("summary").contains("ssim_std"));

  CHECK_THROWS_WITH_AS(evaluate(model, std::vector<ImagePair>{}, "x"), doctest::Contains("no test pairs"),
                       ConfigError);
}
