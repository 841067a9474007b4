#ifndef ATTNGAN_METRICS_HPP_
#define ATTNGAN_METRICS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attngan/data.hpp"
#include "attngan/image.hpp"
#include "attngan/model.hpp"
#include "json.hpp"

namespace attngan {

// All metrics work on 8-bit values; tensors are denormalized first.

inline constexpr double kPsnrCap = 99.0;
inline constexpr std::int64_t kSsimWindow = 8;

double mse(const Image8& a, const Image8& b);
double mse(const Tensor& a, const Tensor& b);

/// 10·log10(255² / mse), or kPsnrCap when mse is zero.
double psnr_from_mse(double mse);
double psnr(const Image8& a, const Image8& b);
double psnr(const Tensor& a, const Tensor& b);

/// 0.299R + 0.587G + 0.114B per pixel (or the single channel of a gray image).
std::vector<double> luma(const Image8& image);

/// Mean SSIM over all 8×8 windows (stride 1) of the luma planes, with
/// C1 = (0.01·255)², C2 = (0.03·255)² and biased window statistics.
double ssim(const Image8& a, const Image8& b);
double ssim(const Tensor& a, const Tensor& b);

struct ImageMetrics {
  std::string id;
  double mse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

ImageMetrics measure(const std::string& id, const Image8& output, const Image8& target);

struct MetricsSummary {
  std::int64_t count = 0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  double ssim_mean = 0.0;
  double ssim_std = 0.0;
};

/// Means and population standard deviations.
MetricsSummary summarize(std::span<const ImageMetrics> rows);

struct MetricsReport {
  std::string config_hash;
  std::vector<std::string> split;      // evaluated ids in order
  std::vector<ImageMetrics> per_image;  // generated vs clean
  MetricsSummary summary;
  std::vector<ImageMetrics> baseline;  // cloudy vs clean
  MetricsSummary baseline_summary;

  nlohmann::json to_json() const;
};

/// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Blue → cyan → yellow → red colour map of a [0, 1] single-channel map.
Image8 heatmap(const Tensor& map);

inline constexpr std::int64_t kGridSeparator = 2;

/// Tiles equally sized RGB images into a grid with white separators
/// between cells.
Image8 make_grid(const std::vector<std::vector<Image8>>& rows);

/// Generator X→Y on one 3×H×W image, outside any tape.
GeneratorOutput<float> translate(const CycleModel<float>& model, const Tensor& image);

struct Evaluation {
  MetricsReport report;
  Image8 grid;  // columns: cloudy, clean, generated, foreground heat-map
};

/// Runs the X→Y generator on every pair and scores it against the clean
/// image, alongside the model-independent cloudy-vs-clean baseline.
Evaluation evaluate(const CycleModel<float>& model, std::span<const ImagePair> test, const std::string& hash);

}  // namespace attngan

#endif  // ATTNGAN_METRICS_HPP_
