#ifndef ATTNGAN_MODEL_HPP_
#define ATTNGAN_MODEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "attngan/nn.hpp"
#include "json.hpp"

namespace attngan {

/// How the attended discriminators combine an image with its attention mask.
enum class MaskCombine { concat, multiply };

struct ModelConfig {
  std::int64_t image_size = 64;
  std::int64_t n_masks = 2;  // n−1 foreground masks + 1 background mask
  std::int64_t residual_blocks = 4;
  std::int64_t base_channels = 16;
  std::int64_t discriminator_layers = 4;
  MaskCombine mask_combine = MaskCombine::concat;

  /// Throws ConfigError unless image_size is a positive multiple of 4 (and of
  /// the discriminator's downsampling factor), n_masks ≥ 2 and all widths ≥ 1.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

/// One generator pass: attention N×n×H×W (softmax over masks, last mask is
/// the background), content N×3(n−1)×H×W in [−1,1], fused N×3×H×W.
template <typename T>
struct GeneratorOutput {
  BasicTensor<T> attention;
  BasicTensor<T> content;
  BasicTensor<T> fused;
};

/// 1 − background attention, N×1×H×W.
template <typename T>
BasicTensor<T> foreground_mask(const GeneratorOutput<T>& out);

/// Encoder (7×7 s1, 3×3 s2, 3×3 s2) → residual body → two upsample+conv
/// stages → attention head (softmax) and content head (tanh) → fusion.
template <typename T>
class Generator {
 public:
  Generator(ParameterRegistry<T>& registry, const std::string& prefix, const ModelConfig& config);

  GeneratorOutput<T> operator()(const BasicTensor<T>& x) const;

 private:
  struct Stage {
    Conv2dLayer<T> conv;
    InstanceNormLayer<T> norm;
  };
  std::int64_t image_size_;
  std::int64_t n_masks_;
  std::vector<Stage> encoder_;
  std::vector<ResidualBlock<T>> body_;
  std::vector<Stage> decoder_;
  Conv2dLayer<T> attention_head_;
  Conv2dLayer<T> content_head_;
};

/// Patch discriminator: (layers−1) 4×4 stride-2 convolutions with
/// leaky_relu(0.2), instance norm on all but the first, then a 4×4 stride-1
/// convolution to a one-channel logit map of size H / 2^(layers−1).
template <typename T>
class Discriminator {
 public:
  Discriminator(ParameterRegistry<T>& registry, const std::string& prefix, std::int64_t in_channels,
                const ModelConfig& config);

  BasicTensor<T> operator()(const BasicTensor<T>& img) const;

  std::int64_t in_channels() const { return in_channels_; }

 private:
  std::int64_t in_channels_;
  std::vector<Conv2dLayer<T>> convs_;
  std::vector<InstanceNormLayer<T>> norms_;  // for layers 1 .. layers−2
};

/// Discriminator over (image, foreground mask) pairs.
template <typename T>
class AttendedDiscriminator {
 public:
  AttendedDiscriminator(ParameterRegistry<T>& registry, const std::string& prefix, const ModelConfig& config);

  BasicTensor<T> operator()(const BasicTensor<T>& img, const BasicTensor<T>& mask) const;

 private:
  MaskCombine combine_;
  Discriminator<T> inner_;
};

/// The full cyclic model: generators X→Y and Y→X, plain discriminators on
/// each domain and attention-guided discriminators on each domain, all in
/// one registry.
template <typename T>
class CycleModel {
 public:
  explicit CycleModel(const ModelConfig& config);

  CycleModel(const CycleModel&) = delete;
  CycleModel& operator=(const CycleModel&) = delete;
  CycleModel(CycleModel&&) = default;
  CycleModel& operator=(CycleModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterRegistry<T>& parameters() { return registry_; }
  const ParameterRegistry<T>& parameters() const { return registry_; }

  const Generator<T>& gen_xy() const { return gen_xy_; }
  const Generator<T>& gen_yx() const { return gen_yx_; }
  const Discriminator<T>& d_x() const { return d_x_; }
  const Discriminator<T>& d_y() const { return d_y_; }
  const AttendedDiscriminator<T>& d_xa() const { return d_xa_; }
  const AttendedDiscriminator<T>& d_ya() const { return d_ya_; }

  static constexpr const char* kGeneratorPrefixes[] = {"gen_xy.", "gen_yx."};
  static constexpr const char* kDiscriminatorPrefixes[] = {"d_x.", "d_y.", "d_xa.", "d_ya."};

 private:
  ModelConfig config_;
  ParameterRegistry<T> registry_;
  Generator<T> gen_xy_;
  Generator<T> gen_yx_;
  Discriminator<T> d_x_;
  Discriminator<T> d_y_;
  AttendedDiscriminator<T> d_xa_;
  AttendedDiscriminator<T> d_ya_;
};

bool is_generator_parameter(const std::string& name);

}  // namespace attngan

#endif  // ATTNGAN_MODEL_HPP_
