#include "attngan/model.hpp"

#include <algorithm>
#include <array>

namespace attngan {

void ModelConfig::validate() const {
  if (image_size < 4 || image_size % 4 != 0) {
    throw ConfigError("image_size must be a positive multiple of 4, got " + std::to_string(image_size));
  }
  if (n_masks < 2) {
    throw ConfigError("n_masks must be >= 2, got " + std::to_string(n_masks));
  }
  if (residual_blocks < 0 || base_channels < 1) {
    throw ConfigError("residual_blocks must be >= 0 and base_channels >= 1");
  }
  if (discriminator_layers < 2) {
    throw ConfigError("discriminator_layers must be >= 2, got " + std::to_string(discriminator_layers));
  }
  const std::int64_t factor = std::int64_t{1} << (discriminator_layers - 1);
  if (image_size % factor != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by the discriminator's " +
                      "downsampling factor " + std::to_string(factor));
  }
}

void to_json(nlohmann::json& j, const ModelConfig& config) {
  j = nlohmann::json{{"image_size", config.image_size},
                     {"n_masks", config.n_masks},
                     {"residual_blocks", config.residual_blocks},
                     {"base_channels", config.base_channels},
                     {"discriminator_layers", config.discriminator_layers},
                     {"mask_combine", config.mask_combine == MaskCombine::concat ? "concat" : "multiply"}};
}

void from_json(const nlohmann::json& j, ModelConfig& config) {
  j.at("image_size").get_to(config.image_size);
  j.at("n_masks").get_to(config.n_masks);
  j.at("residual_blocks").get_to(config.residual_blocks);
  j.at("base_channels").get_to(config.base_channels);
  j.at("discriminator_layers").get_to(config.discriminator_layers);
  const auto combine = j.at("mask_combine").get<std::string>();
  if (combine == "concat") {
    config.mask_combine = MaskCombine::concat;
  } else if (combine == "multiply") {
    config.mask_combine = MaskCombine::multiply;
  } else {
    throw ConfigError("unknown mask_combine: " + combine);
  }
}

template <typename T>
BasicTensor<T> foreground_mask(const GeneratorOutput<T>& out) {
  const auto masks = out.attention.dim(1);
  auto background = slice_channels(out.attention, masks - 1, 1);
  return add_scalar(mul_scalar(background, T(-1)), T(1));
}

template <typename T>
Generator<T>::Generator(ParameterRegistry<T>& registry, const std::string& prefix, const ModelConfig& config)
    : image_size_(config.image_size), n_masks_(config.n_masks) {
  config.validate();
  const auto b = config.base_channels;
  auto stage = [&](const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t s,
                   std::int64_t p) {
    return Stage{Conv2dLayer<T>::create(registry, prefix + "." + name, in, out, k, s, p),
                 InstanceNormLayer<T>::create(registry, prefix + "." + name + "_norm", out)};
  };
  encoder_.push_back(stage("enc1", 3, b, 7, 1, 3));
  encoder_.push_back(stage("enc2", b, 2 * b, 3, 2, 1));
  encoder_.push_back(stage("enc3", 2 * b, 4 * b, 3, 2, 1));
  for (std::int64_t i = 0; i < config.residual_blocks; ++i) {
    body_.push_back(ResidualBlock<T>::create(registry, prefix + ".res" + std::to_string(i), 4 * b));
  }
  decoder_.push_back(stage("dec1", 4 * b, 2 * b, 3, 1, 1));
  decoder_.push_back(stage("dec2", 2 * b, b, 3, 1, 1));
  attention_head_ = Conv2dLayer<T>::create(registry, prefix + ".attention", b, config.n_masks, 7, 1, 3);
  content_head_ = Conv2dLayer<T>::create(registry, prefix + ".content", b, 3 * (config.n_masks - 1), 7, 1, 3);
}

template <typename T>
GeneratorOutput<T> Generator<T>::operator()(const BasicTensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != image_size_ || x.dim(3) != image_size_) {
    throw ShapeError("generate: expected N×3×" + std::to_string(image_size_) + "×" + std::to_string(image_size_) +
                     " input, got " + shape_str(x.shape()));
  }
  BasicTensor<T> h = x;
  for (const auto& s : encoder_) {
    h = relu(s.norm.forward(s.conv.forward(h)));
  }
  for (const auto& block : body_) {
    h = block.forward(h);
  }
  for (const auto& s : decoder_) {
    h = relu(s.norm.forward(s.conv.forward(upsample_nearest(h, 2))));
  }
  GeneratorOutput<T> out;
  out.attention = softmax_over_channel(attention_head_.forward(h));
  out.content = tanh(content_head_.forward(h));
  out.fused = attention_fuse(out.attention, out.content, x);
  return out;
}

template <typename T>
Discriminator<T>::Discriminator(ParameterRegistry<T>& registry, const std::string& prefix, std::int64_t in_channels,
                                const ModelConfig& config)
    : in_channels_(in_channels) {
  config.validate();
  const auto layers = config.discriminator_layers;
  std::int64_t in = in_channels;
  for (std::int64_t i = 0; i + 1 < layers; ++i) {
    const auto out = config.base_channels * (std::int64_t{1} << std::min<std::int64_t>(i, 3));
    const auto name = prefix + ".layer" + std::to_string(i);
    convs_.push_back(Conv2dLayer<T>::create(registry, name, in, out, 4, 2, 1));
    if (i > 0) {
      norms_.push_back(InstanceNormLayer<T>::create(registry, name + "_norm", out));
    }
    in = out;
  }
  convs_.push_back(Conv2dLayer<T>::create(registry, prefix + ".layer" + std::to_string(layers - 1), in, 1, 4, 1, 0));
}

template <typename T>
BasicTensor<T> Discriminator<T>::operator()(const BasicTensor<T>& img) const {
  if (img.rank() != 4 || img.dim(1) != in_channels_) {
    throw ShapeError("discriminate: expected N×" + std::to_string(in_channels_) + "×H×W input, got " +
                     shape_str(img.shape()));
  }
  BasicTensor<T> h = img;
  for (std::size_t i = 0; i + 1 < convs_.size(); ++i) {
    h = convs_[i].forward(h);
    if (i > 0) {
      h = norms_[i - 1].forward(h);
    }
    h = leaky_relu(h);
  }
  // "same" padding for an even kernel: one row/column before, two after.
  h = pad(h, Padding{1, 2, 1, 2});
  return convs_.back().forward(h);
}

template <typename T>
AttendedDiscriminator<T>::AttendedDiscriminator(ParameterRegistry<T>& registry, const std::string& prefix,
                                                const ModelConfig& config)
    : combine_(config.mask_combine),
      inner_(registry, prefix, config.mask_combine == MaskCombine::concat ? 4 : 3, config) {}

template <typename T>
BasicTensor<T> AttendedDiscriminator<T>::operator()(const BasicTensor<T>& img, const BasicTensor<T>& mask) const {
  if (img.rank() != 4 || mask.rank() != 4 || mask.dim(0) != img.dim(0) || mask.dim(1) != 1 ||
      mask.dim(2) != img.dim(2) || mask.dim(3) != img.dim(3)) {
    throw ShapeError("discriminate_attended: mask " + shape_str(mask.shape()) + " does not match image " +
                     shape_str(img.shape()));
  }
  if (combine_ == MaskCombine::concat) {
    const std::array<BasicTensor<T>, 2> parts{img, mask};
    return inner_(concat_channels<T>(parts));
  }
  const std::array<BasicTensor<T>, 3> planes{mask, mask, mask};
  return inner_(mul(img, concat_channels<T>(planes)));
}

template <typename T>
CycleModel<T>::CycleModel(const ModelConfig& config)
    : config_(config),
      registry_(),
      gen_xy_(registry_, "gen_xy", config),
      gen_yx_(registry_, "gen_yx", config),
      d_x_(registry_, "d_x", 3, config),
      d_y_(registry_, "d_y", 3, config),
      d_xa_(registry_, "d_xa", config),
      d_ya_(registry_, "d_ya", config) {}

bool is_generator_parameter(const std::string& name) {
  return name.starts_with("gen_xy.") || name.starts_with("gen_yx.");
}

#define ATTNGAN_INSTANTIATE_MODEL(T)                                       \
  template BasicTensor<T> foreground_mask(const GeneratorOutput<T>&);      \
  template class Generator<T>;                                             \
  template class Discriminator<T>;                                         \
  template class AttendedDiscriminator<T>;                                 \
  template class CycleModel<T>;

ATTNGAN_INSTANTIATE_MODEL(float)
ATTNGAN_INSTANTIATE_MODEL(double)

#undef ATTNGAN_INSTANTIATE_MODEL

}  // namespace attngan
