#include "attngan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "attngan/autograd.hpp"

namespace attngan {

using nlohmann::json;

namespace {

void require_same(const Image8& a, const Image8& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw ShapeError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height) + "x" + std::to_string(b.channels) +
                     ")");
  }
}

// Summed-area table with a zero first row and column.
std::vector<double> integral(std::span<const double> v, std::int64_t h, std::int64_t w) {
  std::vector<double> s(static_cast<std::size_t>((h + 1) * (w + 1)), 0.0);
  for (std::int64_t y = 0; y < h; ++y) {
    double row = 0.0;
    for (std::int64_t x = 0; x < w; ++x) {
      row += v[y * w + x];
      s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
    }
  }
  return s;
}

double box(const std::vector<double>& s, std::int64_t w, std::int64_t y, std::int64_t x, std::int64_t k) {
  const auto stride = w + 1;
  return s[(y + k) * stride + x + k] - s[y * stride + x + k] - s[(y + k) * stride + x] + s[y * stride + x];
}

}  // namespace

double mse(const Image8& a, const Image8& b) {
  require_same(a, b, "mse");
  if (a.pixels.empty()) {
    throw ShapeError("mse: empty images");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.pixels.size());
}

double mse(const Tensor& a, const Tensor& b) { return mse(tensor_to_image(a), tensor_to_image(b)); }

double psnr_from_mse(double m) {
  if (m == 0.0) {
    return kPsnrCap;
  }
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

double psnr(const Image8& a, const Image8& b) { return psnr_from_mse(mse(a, b)); }
double psnr(const Tensor& a, const Tensor& b) { return psnr(tensor_to_image(a), tensor_to_image(b)); }

std::vector<double> luma(const Image8& image) {
  const auto n = image.width * image.height;
  std::vector<double> out(static_cast<std::size_t>(n));
  if (image.channels == 1) {
    for (std::int64_t i = 0; i < n; ++i) {
      out[i] = image.pixels[i];
    }
    return out;
  }
  if (image.channels != 3) {
    throw ShapeError("luma: expected 1 or 3 channels, got " + std::to_string(image.channels));
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const auto* p = &image.pixels[i * 3];
    out[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return out;
}

double ssim(const Image8& a, const Image8& b) {
  require_same(a, b, "ssim");
  const auto h = a.height;
  const auto w = a.width;
  const auto k = kSsimWindow;
  if (h < k || w < k) {
    throw ShapeError("ssim: image " + std::to_string(w) + "x" + std::to_string(h) + " is smaller than the " +
                     std::to_string(k) + "x" + std::to_string(k) + " window");
  }
  const auto la = luma(a);
  const auto lb = luma(b);
  std::vector<double> aa(la.size()), bb(la.size()), ab(la.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    aa[i] = la[i] * la[i];
    bb[i] = lb[i] * lb[i];
    ab[i] = la[i] * lb[i];
  }
  const auto sa = integral(la, h, w);
  const auto sb = integral(lb, h, w);
  const auto saa = integral(aa, h, w);
  const auto sbb = integral(bb, h, w);
  const auto sab = integral(ab, h, w);

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const double inv = 1.0 / static_cast<double>(k * k);
  double total = 0.0;
  for (std::int64_t y = 0; y + k <= h; ++y) {
    for (std::int64_t x = 0; x + k <= w; ++x) {
      const double mu_a = box(sa, w, y, x, k) * inv;
      const double mu_b = box(sb, w, y, x, k) * inv;
      const double var_a = box(saa, w, y, x, k) * inv - mu_a * mu_a;
      const double var_b = box(sbb, w, y, x, k) * inv - mu_b * mu_b;
      const double cov = box(sab, w, y, x, k) * inv - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  }
  return total / static_cast<double>((h - k + 1) * (w - k + 1));
}

double ssim(const Tensor& a, const Tensor& b) { return ssim(tensor_to_image(a), tensor_to_image(b)); }

ImageMetrics measure(const std::string& id, const Image8& output, const Image8& target) {
  ImageMetrics m;
  m.id = id;
  m.mse = mse(output, target);
  m.psnr_db = psnr_from_mse(m.mse);
  m.ssim = ssim(output, target);
  return m;
}

MetricsSummary summarize(std::span<const ImageMetrics> rows) {
  MetricsSummary s;
  s.count = static_cast<std::int64_t>(rows.size());
  if (rows.empty()) {
    return s;
  }
  auto stats = [&](auto field, double& mean, double& sd) {
    double sum = 0.0;
    for (const auto& r : rows) {
      sum += field(r);
    }
    mean = sum / static_cast<double>(rows.size());
    double sq = 0.0;
    for (const auto& r : rows) {
      sq += (field(r) - mean) * (field(r) - mean);
    }
    sd = std::sqrt(sq / static_cast<double>(rows.size()));
  };
  stats([](const ImageMetrics& r) { return r.mse; }, s.mse_mean, s.mse_std);
  stats([](const ImageMetrics& r) { return r.psnr_db; }, s.psnr_mean, s.psnr_std);
  stats([](const ImageMetrics& r) { return r.ssim; }, s.ssim_mean, s.ssim_std);
  return s;
}

namespace {

json rows_json(const std::vector<ImageMetrics>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"id", r.id}, {"mse", r.mse}, {"psnr_db", r.psnr_db}, {"ssim", r.ssim}});
  }
  return out;
}

json summary_json(const MetricsSummary& s) {
  return {{"count", s.count},         {"mse_mean", s.mse_mean},   {"mse_std", s.mse_std},
          {"psnr_mean", s.psnr_mean}, {"psnr_std", s.psnr_std},   {"ssim_mean", s.ssim_mean},
          {"ssim_std", s.ssim_std}};
}

}  // namespace

json MetricsReport::to_json() const {
  return {{"config_hash", config_hash},
          {"split", split},
          {"metrics", {{"scale", "8-bit"}, {"ssim_window", kSsimWindow}, {"ssim_stride", 1}, {"psnr_cap", kPsnrCap}}},
          {"per_image", rows_json(per_image)},
          {"summary", summary_json(summary)},
          {"baseline", {{"per_image", rows_json(baseline)}, {"summary", summary_json(baseline_summary)}}}};
}

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Image8 heatmap(const Tensor& map) {
  const auto gray = unit_to_gray(map);
  Image8 out(gray.width, gray.height, 3);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    const double t = gray.pixels[i] / 255.0;
    auto channel = [&](double center) {
      return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(1.5 - std::abs(4.0 * t - center), 0.0, 1.0)));
    };
    out.pixels[i * 3 + 0] = channel(3.0);
    out.pixels[i * 3 + 1] = channel(2.0);
    out.pixels[i * 3 + 2] = channel(1.0);
  }
  return out;
}

Image8 make_grid(const std::vector<std::vector<Image8>>& rows) {
  if (rows.empty() || rows.front().empty()) {
    throw ContractError("make_grid: no cells");
  }
  const auto& ref = rows.front().front();
  const auto cols = static_cast<std::int64_t>(rows.front().size());
  const auto nrows = static_cast<std::int64_t>(rows.size());
  const auto sep = kGridSeparator;
  Image8 grid(cols * ref.width + (cols - 1) * sep, nrows * ref.height + (nrows - 1) * sep, 3, 255);
  for (std::int64_t r = 0; r < nrows; ++r) {
    if (static_cast<std::int64_t>(rows[r].size()) != cols) {
      throw ContractError("make_grid: ragged rows");
    }
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto& cell = rows[r][c];
      if (cell.width != ref.width || cell.height != ref.height || cell.channels != 3) {
        throw ShapeError("make_grid: cells must share one RGB size");
      }
      const auto oy = r * (ref.height + sep);
      const auto ox = c * (ref.width + sep);
      for (std::int64_t y = 0; y < cell.height; ++y) {
        std::copy_n(&cell.pixels[(y * cell.width) * 3], cell.width * 3, &grid.at(oy + y, ox, 0));
      }
    }
  }
  return grid;
}

GeneratorOutput<float> translate(const CycleModel<float>& model, const Tensor& image) {
  TapeScope<float> no_tape(nullptr);
  Shape shape = image.shape();
  if (shape.size() == 3) {
    shape.insert(shape.begin(), 1);
  }
  return model.gen_xy()(image.view_as(shape));
}

Evaluation evaluate(const CycleModel<float>& model, std::span<const ImagePair> test, const std::string& hash) {
  if (test.empty()) {
    throw ConfigError("no test pairs");
  }
  const auto size = model.config().image_size;
  for (const auto& p : test) {
    if (p.cloudy.rank() != 3 || p.cloudy.dim(1) != size || p.cloudy.dim(2) != size) {
      throw ConfigError("pair '" + p.id + "' is " + shape_str(p.cloudy.shape()) + " but the model expects " +
                        std::to_string(size) + "x" + std::to_string(size));
    }
  }
  Evaluation eval;
  auto& report = eval.report;
  report.config_hash = hash;
  std::vector<std::vector<Image8>> cells;
  for (const auto& p : test) {
    const auto out = translate(model, p.cloudy);
    const auto cloudy = tensor_to_image(p.cloudy);
    const auto clean = tensor_to_image(p.clean);
    const auto generated = tensor_to_image(out.fused);
    report.split.push_back(p.id);
    report.per_image.push_back(measure(p.id, generated, clean));
    report.baseline.push_back(measure(p.id, cloudy, clean));
    cells.push_back({cloudy, clean, generated, heatmap(foreground_mask(out))});
  }
  report.summary = summarize(report.per_image);
  report.baseline_summary = summarize(report.baseline);
  eval.grid = make_grid(cells);
  return eval;
}

}  // namespace attngan
