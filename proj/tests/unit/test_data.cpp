#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "attngan/data.hpp"
#include "attngan/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace attngan;
using attngan::testing::TempDir;
using attngan::testing::random_tensor;

namespace {

Image8 random_image(std::mt19937_64& rng, std::int64_t size, std::int64_t channels = 3) {
  Image8 img(size, size, channels);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& p : img.pixels) {
    p = static_cast<std::uint8_t>(u(rng));
  }
  return img;
}

void write_pair(const TempDir& dir, const std::string& id, std::mt19937_64& rng, std::int64_t size) {
  std::filesystem::create_directories(dir / kCloudDir);
  std::filesystem::create_directories(dir / kLabelDir);
  write_png(dir / kCloudDir / (id + ".png"), random_image(rng, size));
  write_png(dir / kLabelDir / (id + ".png"), random_image(rng, size));
}

std::vector<ImagePair> random_pairs(std::int64_t n, std::int64_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ImagePair> pairs;
  for (std::int64_t i = 0; i < n; ++i) {
    pairs.push_back({"p" + std::to_string(i), random_tensor<float>(rng, {3, size, size}),
                     random_tensor<float>(rng, {3, size, size})});
  }
  return pairs;
}

DatasetManifest manifest_of(std::int64_t n) {
  DatasetManifest m;
  m.image_size = 8;
  for (std::int64_t i = 0; i < n; ++i) {
    m.ids.push_back("id" + std::to_string(i));
  }
  return m;
}

// Counter-clockwise quarter turn written out independently of the library.
Tensor rot90_oracle(const Tensor& x) {
  const auto c = x.dim(0);
  const auto h = x.dim(1);
  const auto w = x.dim(2);
  std::vector<float> out(static_cast<std::size_t>(c * w * h));
  for (std::int64_t k = 0; k < c; ++k) {
    for (std::int64_t i = 0; i < w; ++i) {
      for (std::int64_t j = 0; j < h; ++j) {
        // out(i, j) = in(j, w - 1 - i)
        out[(k * w + i) * h + j] = x.data()[(k * h + j) * w + (w - 1 - i)];
      }
    }
  }
  return Tensor({c, w, h}, out);
}

}  // namespace

TEST_CASE("loading pairs sorted by stem, resized to the requested size") {
  TempDir dir("load");
  std::mt19937_64 rng(1);
  write_pair(dir, "b", rng, 16);
  write_pair(dir, "a", rng, 16);
  write_pair(dir, "c", rng, 16);
  const auto ds = load_dataset(dir.path(), 8);
  REQUIRE(ds.pairs.size() == 3);
  CHECK(ds.manifest.ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(ds.pairs[0].cloudy.shape() == Shape{3, 8, 8});
  CHECK(ds.pair("c").id == "c");
  CHECK_THROWS_AS(ds.pair("zzz"), LookupError);
  for (float v : ds.pairs[1].clean.data()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("a missing counterpart names the pair") {
  TempDir dir("missing");
  std::mt19937_64 rng(2);
  write_pair(dir, "ok", rng, 8);
  write_png(dir / kCloudDir / "lonely.png", random_image(rng, 8));
  try {
    load_dataset(dir.path(), 8);
    FAIL("expected ManifestError");
  } catch (const ManifestError& e) {
    CHECK(std::string(e.what()).find("lonely") != std::string::npos);
    CHECK(std::string(e.what()).find("label/lonely.png") != std::string::npos);
  }
}

TEST_CASE("an empty directory has no pairs") {
  TempDir dir("empty");
  std::filesystem::create_directories(dir / kCloudDir);
  std::filesystem::create_directories(dir / kLabelDir);
  CHECK_THROWS_WITH_AS(load_dataset(dir.path(), 8), doctest::Contains("no pairs found"), ManifestError);
}

TEST_CASE("corrupt PNG is a decode error") {
  TempDir dir("corrupt");
  std::mt19937_64 rng(3);
  write_pair(dir, "x", rng, 8);
  std::ofstream(dir / kCloudDir / "x.png", std::ios::binary) << "\x89PNG\r\n\x1a\nnot really";
  CHECK_THROWS_AS(load_dataset(dir.path(), 8), DecodeError);
}

TEST_CASE("8-bit values survive normalize and denormalize") {
  for (int v = 0; v < 256; ++v) {
    const float n = normalize_u8(static_cast<std::uint8_t>(v));
    CHECK(n >= -1.0f);
    CHECK(n <= 1.0f);
    CHECK(denormalize(n) == v);
  }
  std::mt19937_64 rng(4);
  const auto img = random_image(rng, 5);
  CHECK(tensor_to_image(image_to_tensor(img)) == img);
}

TEST_CASE("png round-trip keeps every byte") {
  TempDir dir("png");
  std::mt19937_64 rng(5);
  for (std::int64_t ch : {1, 3, 4}) {
    const auto img = random_image(rng, 7, ch);
    write_png(dir / "x.png", img);
    CHECK(read_png(dir / "x.png") == img);
  }
}

TEST_CASE("split of 500 ids is 450 / 50, disjoint and seeded") {
  const auto m = manifest_of(500);
  CHECK(default_train_count(500) == 450);
  const auto s = split(m, 450, 7);
  CHECK(s.train.size() == 450);
  CHECK(s.test.size() == 50);
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 500);
  CHECK(split(m, 450, 7).test == s.test);
  CHECK(split(m, 450, 8).test != s.test);
  CHECK_THROWS_AS(split(m, 501, 7), BoundsError);
  CHECK_THROWS_AS(split(m, -1, 7), BoundsError);
}

TEST_CASE("an empty test split warns") {
  std::ostringstream captured;
  auto* old = std::clog.rdbuf(captured.rdbuf());
  const auto s = split(manifest_of(5), 5, 1);
  std::clog.rdbuf(old);
  CHECK(s.test.empty());
  CHECK(captured.str().find("warning") != std::string::npos);
}

TEST_CASE("manifest round-trips and rejects unknown split ids") {
  TempDir dir("manifest");
  auto m = split(manifest_of(10), 9, 3);
  m.seed = 3;
  m.provenance["id0"] = {{"source", "synth"}};
  write_manifest(dir / kManifestFile, m);
  const auto back = read_manifest(dir / kManifestFile);
  CHECK(back.ids == m.ids);
  CHECK(back.train == m.train);
  CHECK(back.test == m.test);
  CHECK(back.provenance == m.provenance);
  nlohmann::json j = m;
  j["split"]["test"].push_back("ghost");
  CHECK_THROWS_AS(j.get<DatasetManifest>(), ManifestError);
}

TEST_CASE("450 pairs with three ops give exactly 1800 aligned pairs") {
  const auto pairs = random_pairs(450, 4, 6);
  const std::vector<AugmentKind> ops = parse_augment_list("rot90,flip_h,flip_v");
  const auto out = augment(pairs, ops, 42);
  REQUIRE(out.pairs.size() == 1800);
  std::set<std::string> ids;
  for (const auto& p : out.pairs) {
    ids.insert(p.id);
    CHECK(p.cloudy.shape() == p.clean.shape());
  }
  CHECK(ids.size() == 1800);
  // Variants keep the pair aligned: the same transform is applied to both sides.
  for (std::size_t i = 0; i < 450; ++i) {
    CHECK(bitwise_equal(out.pairs[i].cloudy, pairs[i].cloudy));
  }
  for (const auto& p : out.pairs) {
    if (p.id.ends_with("__rot90")) {
      const auto& src = pairs[std::stoul(p.id.substr(1, p.id.find("__") - 1))];
      CHECK(bitwise_equal(p.cloudy, rot90_oracle(src.cloudy)));
      CHECK(bitwise_equal(p.clean, rot90_oracle(src.clean)));
    }
  }
  CHECK(out.provenance.size() == 1350);
  CHECK(out.provenance.at("p3__flip_h").at("source") == "p3");
}

TEST_CASE("flips are involutions and four quarter turns are the identity") {
  std::mt19937_64 rng(7);
  const auto x = random_tensor<float>(rng, {3, 6, 6});
  const auto op = [](AugmentKind k) { return draw_augment_op(k, 6, 0); };
  for (auto k : {AugmentKind::flip_h, AugmentKind::flip_v}) {
    const auto once = apply_augment(x, op(k));
    CHECK_FALSE(bitwise_equal(once, x));
    CHECK(bitwise_equal(apply_augment(once, op(k)), x));
  }
  auto r = x;
  for (int i = 0; i < 4; ++i) {
    r = apply_augment(r, op(AugmentKind::rot90));
  }
  CHECK(bitwise_equal(r, x));
  CHECK(bitwise_equal(apply_augment(apply_augment(x, op(AugmentKind::rot90)), op(AugmentKind::rot270)), x));
  CHECK(bitwise_equal(apply_augment(apply_augment(x, op(AugmentKind::rot90)), op(AugmentKind::rot90)),
                      apply_augment(x, op(AugmentKind::rot180))));
}

TEST_CASE("flip_h mirrors columns") {
  const Tensor x({1, 1, 3}, {1.0f, 2.0f, 3.0f});
  const auto y = apply_augment(x, draw_augment_op(AugmentKind::flip_h, 3, 0));
  CHECK(y.data()[0] == 3.0f);
  CHECK(y.data()[2] == 1.0f);
}

TEST_CASE("crop and background colour keep size and bounds") {
  std::mt19937_64 rng(8);
  const auto x = random_tensor<float>(rng, {3, 16, 16});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = draw_augment_op(AugmentKind::crop, 16, seed);
    CHECK(c.crop_size >= 12);
    CHECK(c.crop_top + c.crop_size <= 16);
    CHECK(apply_augment(x, c).shape() == x.shape());
    const auto g = draw_augment_op(AugmentKind::bg_color, 16, seed);
    for (double gain : g.gains) {
      CHECK(gain >= kGainMin);
      CHECK(gain <= kGainMax);
    }
    const auto shifted = apply_augment(x, g);
    for (float v : shifted.data()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
  // A full-size crop is the identity.
  AugmentOp full{AugmentKind::crop, 16, 0, 0, {1, 1, 1}};
  const auto y = apply_augment(x, full);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("augmentation names") {
  CHECK(parse_augment_kind("rot180") == AugmentKind::rot180);
  CHECK(to_string(AugmentKind::bg_color) == "bg_color");
  CHECK_THROWS_AS(parse_augment_kind("shear"), ConfigError);
  CHECK_THROWS_AS(parse_augment_list("rot90,,flip_h"), ConfigError);
}

TEST_CASE("augmentation is deterministic for a seed") {
  const auto pairs = random_pairs(3, 8, 9);
  const std::vector<AugmentKind> ops{AugmentKind::crop, AugmentKind::bg_color};
  const auto a = augment(pairs, ops, 5);
  const auto b = augment(pairs, ops, 5);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(bitwise_equal(a.pairs[i].clean, b.pairs[i].clean));
  }
  CHECK(a.provenance == b.provenance);
}

TEST_CASE("synthetic scenes: composite follows the alpha layer") {
  SynthOptions o;
  o.image_size = 24;
  const auto s = synth_scene(o, 3);
  bool any_cloud = false;
  for (std::int64_t y = 0; y < 24; ++y) {
    for (std::int64_t x = 0; x < 24; ++x) {
      const double a = s.alpha.at(y, x, 0) / 255.0;
      any_cloud = any_cloud || a > 0.0;
      for (int c = 0; c < 3; ++c) {
        const double expected = a * 255.0 + (1.0 - a) * s.clean.at(y, x, c);
        CHECK(std::abs(s.cloudy.at(y, x, c) - expected) <= 1.0);
      }
    }
  }
  CHECK(any_cloud);
  CHECK(synth_scene(o, 3).cloudy == s.cloudy);
  CHECK_FALSE(synth_scene(o, 4).clean == s.clean);
}

TEST_CASE("alpha 0 leaves the scene clean and alpha 1 turns it white") {
  SynthOptions clear;
  clear.image_size = 16;
  clear.cloud_opacity = 0.0;
  const auto a = synth_scene(clear, 0);
  CHECK(a.cloudy == a.clean);

  SynthOptions overcast = clear;
  overcast.cloud_opacity = 1.0;
  overcast.cloud_threshold = -10.0;
  const auto b = synth_scene(overcast, 0);
  for (auto v : b.cloudy.pixels) {
    CHECK(v == 255);
  }
  for (auto v : b.alpha.pixels) {
    CHECK(v == 255);
  }
}

TEST_CASE("synth writes cloud, label and alpha PNGs with a manifest") {
  TempDir dir("synth");
  SynthOptions o;
  o.count = 10;
  o.image_size = 8;
  const auto m = synth_dataset(o, dir.path());
  CHECK(m.ids.size() == 10);
  CHECK(m.train.size() == 9);
  CHECK(m.test.size() == 1);
  for (const char* sub : {kCloudDir, kLabelDir, kAlphaDir}) {
    CHECK(std::filesystem::exists(dir / sub / (synth_id(4) + ".png")));
  }
  const auto ds = load_dataset(dir.path(), 8);
  CHECK(ds.manifest.train == m.train);
  CHECK(tensor_to_image(ds.pair(synth_id(2)).clean) == synth_scene(o, 2).clean);
}
