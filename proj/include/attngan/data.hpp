#ifndef ATTNGAN_DATA_HPP_
#define ATTNGAN_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attngan/image.hpp"
#include "attngan/tensor.hpp"
#include "json.hpp"

namespace attngan {

/// A (cloudy, clean) pair, each 3×H×W in [−1, 1].
struct ImagePair {
  std::string id;
  Tensor cloudy;
  Tensor clean;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::int64_t image_size = 0;
  std::vector<std::string> ids;
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  nlohmann::json provenance = nlohmann::json::object();  // id → {source, op, params}
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kCloudDir = "cloud";
inline constexpr const char* kLabelDir = "label";
inline constexpr const char* kAlphaDir = "alpha";

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct Dataset {
  DatasetManifest manifest;
  std::vector<ImagePair> pairs;  // in manifest id order

  const ImagePair& pair(std::string_view id) const;
  std::vector<ImagePair> select(const std::vector<std::string>& ids) const;
};

/// Loads every `cloud/<name>.png` with its `label/<name>.png` counterpart,
/// area-resized to image_size×image_size. Ids are file stems in sorted
/// order. Provenance is carried over from an existing manifest.json.
Dataset load_dataset(const std::filesystem::path& root, std::int64_t image_size);

/// Share of pairs used for training when no explicit count is given.
inline constexpr double kDefaultTrainFraction = 0.9;
std::int64_t default_train_count(std::int64_t total);

/// Seeded shuffle of the ids into train (first train_count) and test.
/// Emits a warning on std::clog when the test split comes out empty.
DatasetManifest split(const DatasetManifest& manifest, std::int64_t train_count, std::uint64_t seed);

enum class AugmentKind { rot90, rot180, rot270, flip_h, flip_v, crop, bg_color };

AugmentKind parse_augment_kind(std::string_view name);
std::string to_string(AugmentKind kind);

/// Comma-separated list of augmentation names.
std::vector<AugmentKind> parse_augment_list(std::string_view list);

/// A concrete augmentation with its seed-derived parameters.
struct AugmentOp {
  AugmentKind kind = AugmentKind::rot90;
  std::int64_t crop_size = 0;  // side of the square crop, in pixels
  std::int64_t crop_top = 0;
  std::int64_t crop_left = 0;
  std::array<double, 3> gains{1.0, 1.0, 1.0};  // per-channel background gain

  nlohmann::json params() const;
};

inline constexpr double kCropMinScale = 0.75;
inline constexpr double kGainMin = 0.8;
inline constexpr double kGainMax = 1.2;

AugmentOp draw_augment_op(AugmentKind kind, std::int64_t image_size, std::uint64_t seed);

/// Applies `op` to one 3×H×W image. Rotations are counter-clockwise;
/// crops are resized back bilinearly; gains act on [0, 1] intensities and
/// the result is clamped to [−1, 1].
Tensor apply_augment(const Tensor& image, const AugmentOp& op);

struct AugmentResult {
  std::vector<ImagePair> pairs;  // originals followed by one variant per (pair, op)
  nlohmann::json provenance;     // variant id → {source, op, params}
};

/// Expands N pairs to N·(1 + ops.size()). Both images of a pair receive the
/// same op parameters.
AugmentResult augment(std::span<const ImagePair> pairs, std::span<const AugmentKind> ops, std::uint64_t seed);

/// Writes cloud/ and label/ PNGs for every pair plus manifest.json.
void write_dataset(const std::filesystem::path& root, std::span<const ImagePair> pairs, DatasetManifest manifest);

struct SynthOptions {
  std::int64_t count = 1;
  std::int64_t image_size = 64;
  std::uint64_t seed = 42;
  double cloud_threshold = 0.42;  // fractal value below which the sky is clear
  double cloud_softness = 0.25;   // width of the smoothstep ramp above the threshold
  double cloud_opacity = 0.8;     // alpha at full cloud cover
};

struct SynthScene {
  Image8 clean;
  Image8 cloudy;
  Image8 alpha;  // single channel, 255 = full cloud
};

std::string synth_id(std::int64_t index);

/// Scene `index` of the seeded family: terrain texture, fractal cloud alpha
/// and cloudy = alpha·white + (1 − alpha)·clean, rounded to 8 bits.
SynthScene synth_scene(const SynthOptions& options, std::int64_t index);

/// Writes `count` scenes in the cloud/ label/ alpha/ layout with a manifest.
DatasetManifest synth_dataset(const SynthOptions& options, const std::filesystem::path& out);

}  // namespace attngan

#endif  // ATTNGAN_DATA_HPP_
