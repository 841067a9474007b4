#include "attngan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <unordered_map>

#include "attngan/noise.hpp"

namespace attngan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Runs body(i) for i in [0, n) on the OpenMP pool and rethrows the first
// failure (by index) on the calling thread.
template <typename Body>
void parallel_items(std::int64_t n, Body&& body) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

std::vector<std::string> png_stems(const fs::path& dir) {
  std::vector<std::string> stems;
  if (!fs::is_directory(dir)) {
    return stems;
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      stems.push_back(entry.path().stem().string());
    }
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

void check_split(const DatasetManifest& m) {
  const std::set<std::string> ids(m.ids.begin(), m.ids.end());
  std::set<std::string> seen;
  for (const auto* list : {&m.train, &m.test}) {
    for (const auto& id : *list) {
      if (!ids.contains(id)) {
        throw ManifestError("manifest split names unknown id '" + id + "'");
      }
      if (!seen.insert(id).second) {
        throw ManifestError("manifest split lists id '" + id + "' more than once");
      }
    }
  }
}

}  // namespace

void to_json(json& j, const DatasetManifest& m) {
  j = json{{"root", m.root.string()},
           {"image_size", m.image_size},
           {"ids", m.ids},
           {"split", {{"train", m.train}, {"test", m.test}}},
           {"seed", m.seed},
           {"provenance", m.provenance}};
}

void from_json(const json& j, DatasetManifest& m) {
  try {
    m.root = j.value("root", std::string());
    m.image_size = j.at("image_size").get<std::int64_t>();
    m.ids = j.at("ids").get<std::vector<std::string>>();
    const auto& s = j.at("split");
    m.train = s.at("train").get<std::vector<std::string>>();
    m.test = s.at("test").get<std::vector<std::string>>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.provenance = j.value("provenance", json::object());
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  check_split(m);
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << json(manifest).dump(2) << '\n';
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError("malformed manifest " + path.string() + ": " + e.what());
  }
  return j.get<DatasetManifest>();
}

const ImagePair& Dataset::pair(std::string_view id) const {
  for (const auto& p : pairs) {
    if (p.id == id) {
      return p;
    }
  }
  throw LookupError("no pair with id '" + std::string(id) + "'");
}

std::vector<ImagePair> Dataset::select(const std::vector<std::string>& ids) const {
  std::unordered_map<std::string, const ImagePair*> index;
  for (const auto& p : pairs) {
    index.emplace(p.id, &p);
  }
  std::vector<ImagePair> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) {
      throw LookupError("no pair with id '" + id + "'");
    }
    out.push_back(*it->second);
  }
  return out;
}

Dataset load_dataset(const fs::path& root, std::int64_t image_size) {
  if (image_size < 1) {
    throw ConfigError("image_size must be positive, got " + std::to_string(image_size));
  }
  const auto clouds = png_stems(root / kCloudDir);
  const auto labels = png_stems(root / kLabelDir);
  if (clouds.empty() && labels.empty()) {
    throw ManifestError("no pairs found in " + root.string());
  }
  std::vector<std::string> unmatched;
  std::set_symmetric_difference(clouds.begin(), clouds.end(), labels.begin(), labels.end(),
                                std::back_inserter(unmatched));
  if (!unmatched.empty()) {
    const auto& id = unmatched.front();
    const bool has_cloud = std::binary_search(clouds.begin(), clouds.end(), id);
    throw ManifestError("pair '" + id + "' has no " + (has_cloud ? kLabelDir : kCloudDir) + "/" + id +
                        ".png counterpart");
  }

  Dataset dataset;
  dataset.manifest.root = root;
  dataset.manifest.image_size = image_size;
  dataset.manifest.ids = clouds;
  dataset.pairs.resize(clouds.size());
  parallel_items(static_cast<std::int64_t>(clouds.size()), [&](std::int64_t i) {
    const auto& id = clouds[static_cast<std::size_t>(i)];
    auto load = [&](const char* dir) {
      const auto image = read_png_rgb(root / dir / (id + ".png"));
      return image_to_tensor(resize_area(image, image_size, image_size));
    };
    auto& pair = dataset.pairs[static_cast<std::size_t>(i)];
    pair.id = id;
    pair.cloudy = load(kCloudDir);
    pair.clean = load(kLabelDir);
  });

  const auto manifest_path = root / kManifestFile;
  if (fs::exists(manifest_path)) {
    const auto stored = read_manifest(manifest_path);
    dataset.manifest.provenance = stored.provenance;
    dataset.manifest.seed = stored.seed;
    if (std::set<std::string>(stored.ids.begin(), stored.ids.end()) ==
        std::set<std::string>(clouds.begin(), clouds.end())) {
      dataset.manifest.train = stored.train;
      dataset.manifest.test = stored.test;
    } else {
      std::clog << "warning: " << manifest_path.string()
                << " does not match the directory contents; ignoring its split\n";
    }
  }
  return dataset;
}

std::int64_t default_train_count(std::int64_t total) {
  return static_cast<std::int64_t>(std::llround(kDefaultTrainFraction * static_cast<double>(total)));
}

DatasetManifest split(const DatasetManifest& manifest, std::int64_t train_count, std::uint64_t seed) {
  const auto total = static_cast<std::int64_t>(manifest.ids.size());
  if (train_count < 0 || train_count > total) {
    throw BoundsError("train_count " + std::to_string(train_count) + " outside [0, " + std::to_string(total) +
                      "]");
  }
  auto ids = manifest.ids;
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  DatasetManifest out = manifest;
  out.seed = seed;
  out.train.assign(ids.begin(), ids.begin() + train_count);
  out.test.assign(ids.begin() + train_count, ids.end());
  if (out.test.empty()) {
    std::clog << "warning: test split is empty (train_count = " << train_count << " of " << total << ")\n";
  }
  return out;
}

AugmentKind parse_augment_kind(std::string_view name) {
  static const std::pair<std::string_view, AugmentKind> kNames[] = {
      {"rot90", AugmentKind::rot90},   {"rot180", AugmentKind::rot180}, {"rot270", AugmentKind::rot270},
      {"flip_h", AugmentKind::flip_h}, {"flip_v", AugmentKind::flip_v}, {"crop", AugmentKind::crop},
      {"bg_color", AugmentKind::bg_color}};
  for (const auto& [n, k] : kNames) {
    if (n == name) {
      return k;
    }
  }
  throw ConfigError("unknown augmentation '" + std::string(name) +
                    "' (expected rot90, rot180, rot270, flip_h, flip_v, crop or bg_color)");
}

std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::rot90: return "rot90";
    case AugmentKind::rot180: return "rot180";
    case AugmentKind::rot270: return "rot270";
    case AugmentKind::flip_h: return "flip_h";
    case AugmentKind::flip_v: return "flip_v";
    case AugmentKind::crop: return "crop";
    case AugmentKind::bg_color: return "bg_color";
  }
  return "unknown";
}

std::vector<AugmentKind> parse_augment_list(std::string_view list) {
  std::vector<AugmentKind> kinds;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    if (end == std::string_view::npos) {
      end = list.size();
    }
    auto item = list.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') {
      item.remove_prefix(1);
    }
    while (!item.empty() && item.back() == ' ') {
      item.remove_suffix(1);
    }
    if (item.empty()) {
      if (list.find_first_not_of(' ') == std::string_view::npos) {
        break;
      }
      throw ConfigError("empty entry in augmentation list '" + std::string(list) + "'");
    }
    kinds.push_back(parse_augment_kind(item));
    start = end + 1;
  }
  return kinds;
}

json AugmentOp::params() const {
  switch (kind) {
    case AugmentKind::crop: return {{"size", crop_size}, {"top", crop_top}, {"left", crop_left}};
    case AugmentKind::bg_color: return {{"gains", gains}};
    default: return json::object();
  }
}

AugmentOp draw_augment_op(AugmentKind kind, std::int64_t image_size, std::uint64_t seed) {
  AugmentOp op;
  op.kind = kind;
  std::mt19937_64 rng(seed);
  if (kind == AugmentKind::crop) {
    std::uniform_real_distribution<double> scale(kCropMinScale, 1.0);
    op.crop_size = std::clamp<std::int64_t>(std::llround(scale(rng) * static_cast<double>(image_size)), 1,
                                            image_size);
    std::uniform_int_distribution<std::int64_t> offset(0, image_size - op.crop_size);
    op.crop_top = offset(rng);
    op.crop_left = offset(rng);
  } else if (kind == AugmentKind::bg_color) {
    std::uniform_real_distribution<double> gain(kGainMin, kGainMax);
    for (auto& g : op.gains) {
      g = gain(rng);
    }
  }
  return op;
}

namespace {

Tensor bilinear_crop(const Tensor& image, const AugmentOp& op) {
  const auto c = image.dim(0);
  const auto h = image.dim(1);
  const auto w = image.dim(2);
  if (op.crop_size < 1 || op.crop_top < 0 || op.crop_left < 0 || op.crop_top + op.crop_size > h ||
      op.crop_left + op.crop_size > w) {
    throw BoundsError("crop window outside the image");
  }
  const auto src = image.data();
  std::vector<float> out(static_cast<std::size_t>(c * h * w));
  const double sy = static_cast<double>(op.crop_size) / static_cast<double>(h);
  const double sx = static_cast<double>(op.crop_size) / static_cast<double>(w);
  const auto last = op.crop_size - 1;
  for (std::int64_t y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(last));
    const auto y0 = static_cast<std::int64_t>(fy);
    const auto y1 = std::min(y0 + 1, last);
    const double ty = fy - y0;
    for (std::int64_t x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(last));
      const auto x0 = static_cast<std::int64_t>(fx);
      const auto x1 = std::min(x0 + 1, last);
      const double tx = fx - x0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::int64_t yy, std::int64_t xx) {
          return static_cast<double>(src[(ch * h + op.crop_top + yy) * w + op.crop_left + xx]);
        };
        const double top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * tx;
        const double bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * tx;
        out[(ch * h + y) * w + x] = static_cast<float>(top + (bottom - top) * ty);
      }
    }
  }
  return Tensor({c, h, w}, std::move(out));
}

}  // namespace

Tensor apply_augment(const Tensor& image, const AugmentOp& op) {
  if (image.rank() != 3) {
    throw ShapeError("apply_augment: expected C×H×W, got " + shape_str(image.shape()));
  }
  const auto c = image.dim(0);
  const auto h = image.dim(1);
  const auto w = image.dim(2);
  const auto src = image.data();
  auto remap = [&](std::int64_t oh, std::int64_t ow, auto source_index) {
    std::vector<float> out(static_cast<std::size_t>(c * oh * ow));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t x = 0; x < ow; ++x) {
          const auto [sy, sx] = source_index(y, x);
          out[(ch * oh + y) * ow + x] = src[(ch * h + sy) * w + sx];
        }
      }
    }
    return Tensor({c, oh, ow}, std::move(out));
  };
  using P = std::pair<std::int64_t, std::int64_t>;
  switch (op.kind) {
    case AugmentKind::rot90:
      return remap(w, h, [&](std::int64_t y, std::int64_t x) { return P{x, w - 1 - y}; });
    case AugmentKind::rot180:
      return remap(h, w, [&](std::int64_t y, std::int64_t x) { return P{h - 1 - y, w - 1 - x}; });
    case AugmentKind::rot270:
      return remap(w, h, [&](std::int64_t y, std::int64_t x) { return P{h - 1 - x, y}; });
    case AugmentKind::flip_h:
      return remap(h, w, [&](std::int64_t y, std::int64_t x) { return P{y, w - 1 - x}; });
    case AugmentKind::flip_v:
      return remap(h, w, [&](std::int64_t y, std::int64_t x) { return P{h - 1 - y, x}; });
    case AugmentKind::crop:
      return bilinear_crop(image, op);
    case AugmentKind::bg_color: {
      if (c != 3) {
        throw ShapeError("bg_color: expected 3 channels, got " + std::to_string(c));
      }
      std::vector<float> out(src.begin(), src.end());
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double g = op.gains[static_cast<std::size_t>(ch)];
        for (std::int64_t i = 0; i < h * w; ++i) {
          auto& v = out[ch * h * w + i];
          v = static_cast<float>(std::clamp((static_cast<double>(v) + 1.0) * g - 1.0, -1.0, 1.0));
        }
      }
      return Tensor({c, h, w}, std::move(out));
    }
  }
  throw ContractError("apply_augment: unhandled kind");
}

AugmentResult augment(std::span<const ImagePair> pairs, std::span<const AugmentKind> ops, std::uint64_t seed) {
  AugmentResult result;
  result.provenance = json::object();
  const auto n = static_cast<std::int64_t>(pairs.size());
  const auto k = static_cast<std::int64_t>(ops.size());
  result.pairs.resize(static_cast<std::size_t>(n * (1 + k)));
  std::copy(pairs.begin(), pairs.end(), result.pairs.begin());
  std::vector<AugmentOp> drawn(static_cast<std::size_t>(n * k));
  parallel_items(n * k, [&](std::int64_t item) {
    const auto i = item / k;
    const auto j = item % k;
    const auto& src = pairs[static_cast<std::size_t>(i)];
    if (src.cloudy.shape() != src.clean.shape()) {
      throw ShapeError("pair '" + src.id + "' has mismatched image shapes");
    }
    const auto op = draw_augment_op(ops[static_cast<std::size_t>(j)], std::min(src.clean.dim(1), src.clean.dim(2)),
                                    mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)),
                                             static_cast<std::uint64_t>(j)));
    auto& out = result.pairs[static_cast<std::size_t>(n + item)];
    out.id = src.id + "__" + to_string(op.kind);
    out.cloudy = apply_augment(src.cloudy, op);
    out.clean = apply_augment(src.clean, op);
    drawn[static_cast<std::size_t>(item)] = op;
  });
  for (std::int64_t item = 0; item < n * k; ++item) {
    const auto& op = drawn[static_cast<std::size_t>(item)];
    result.provenance[result.pairs[static_cast<std::size_t>(n + item)].id] = {
        {"source", pairs[static_cast<std::size_t>(item / k)].id}, {"op", to_string(op.kind)}, {"params", op.params()}};
  }
  return result;
}

void write_dataset(const fs::path& root, std::span<const ImagePair> pairs, DatasetManifest manifest) {
  std::error_code ec;
  fs::create_directories(root / kCloudDir, ec);
  fs::create_directories(root / kLabelDir, ec);
  if (ec) {
    throw IoError("cannot create " + root.string() + ": " + ec.message());
  }
  parallel_items(static_cast<std::int64_t>(pairs.size()), [&](std::int64_t i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    write_png(root / kCloudDir / (p.id + ".png"), tensor_to_image(p.cloudy));
    write_png(root / kLabelDir / (p.id + ".png"), tensor_to_image(p.clean));
  });
  manifest.root = root;
  manifest.ids.clear();
  for (const auto& p : pairs) {
    manifest.ids.push_back(p.id);
  }
  if (!pairs.empty()) {
    manifest.image_size = pairs.front().clean.dim(1);
  }
  check_split(manifest);
  write_manifest(root / kManifestFile, manifest);
}

std::string synth_id(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%04lld", static_cast<long long>(index));
  return buf;
}

namespace {

struct PaletteStop {
  double at;
  double rgb[3];
};

// Deep water, shallow water, sand, grass, forest, soil, rock.
constexpr PaletteStop kPalette[] = {
    {0.00, {28, 58, 112}},  {0.30, {52, 102, 150}}, {0.36, {190, 176, 132}}, {0.42, {112, 150, 72}},
    {0.60, {54, 104, 50}},  {0.75, {118, 92, 60}},  {1.00, {150, 140, 130}},
};

void terrain_color(double h, double shade, std::uint8_t* rgb) {
  h = std::clamp(h, 0.0, 1.0);
  std::size_t i = 0;
  while (i + 2 < std::size(kPalette) && h > kPalette[i + 1].at) {
    ++i;
  }
  const auto& a = kPalette[i];
  const auto& b = kPalette[i + 1];
  const double t = std::clamp((h - a.at) / (b.at - a.at), 0.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    const double v = (a.rgb[c] + (b.rgb[c] - a.rgb[c]) * t) * shade;
    rgb[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
}

}  // namespace

SynthScene synth_scene(const SynthOptions& options, std::int64_t index) {
  if (options.image_size < 1) {
    throw ConfigError("synth: image size must be positive");
  }
  const auto size = options.image_size;
  const ValueNoise terrain(mix_seed(options.seed, static_cast<std::uint64_t>(2 * index)));
  const ValueNoise detail(mix_seed(options.seed ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(index)));
  const ValueNoise cloud(mix_seed(options.seed, static_cast<std::uint64_t>(2 * index + 1)));
  SynthScene scene{Image8(size, size, 3), Image8(size, size, 3), Image8(size, size, 1)};
  const double inv = 1.0 / static_cast<double>(size);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double u = (x + 0.5) * inv;
      const double v = (y + 0.5) * inv;
      const double h = terrain.fractal(u * 4.0, v * 4.0, 5);
      const double shade = 0.85 + 0.3 * detail.fractal(u * 12.0, v * 12.0, 2);
      std::uint8_t* clean = &scene.clean.at(y, x, 0);
      terrain_color(h, shade, clean);

      const double density = cloud.fractal(u * 3.0, v * 3.0, 5);
      const double alpha =
          options.cloud_opacity * smoothstep(options.cloud_threshold, options.cloud_threshold + options.cloud_softness,
                                             density);
      const auto alpha8 = static_cast<std::uint8_t>(std::clamp(std::lround(alpha * 255.0), 0L, 255L));
      scene.alpha.at(y, x, 0) = alpha8;
      const double a = alpha8 / 255.0;
      for (int c = 0; c < 3; ++c) {
        scene.cloudy.at(y, x, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(a * 255.0 + (1.0 - a) * clean[c]), 0L, 255L));
      }
    }
  }
  return scene;
}

DatasetManifest synth_dataset(const SynthOptions& options, const fs::path& out) {
  if (options.count < 1) {
    throw ConfigError("synth: count must be at least 1, got " + std::to_string(options.count));
  }
  std::error_code ec;
  for (const char* dir : {kCloudDir, kLabelDir, kAlphaDir}) {
    fs::create_directories(out / dir, ec);
    if (ec) {
      throw IoError("cannot create " + (out / dir).string() + ": " + ec.message());
    }
  }
  parallel_items(options.count, [&](std::int64_t i) {
    const auto scene = synth_scene(options, i);
    const auto name = synth_id(i) + ".png";
    write_png(out / kCloudDir / name, scene.cloudy);
    write_png(out / kLabelDir / name, scene.clean);
    write_png(out / kAlphaDir / name, scene.alpha);
  });

  DatasetManifest manifest;
  manifest.root = out;
  manifest.image_size = options.image_size;
  for (std::int64_t i = 0; i < options.count; ++i) {
    manifest.ids.push_back(synth_id(i));
    manifest.provenance[manifest.ids.back()] = {{"source", "synth"}, {"index", i}};
  }
  manifest = split(manifest, default_train_count(options.count), options.seed);
  write_manifest(out / kManifestFile, manifest);
  return manifest;
}

}  // namespace attngan
