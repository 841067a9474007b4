#include "attngan/nn.hpp"

#include <algorithm>
#include <random>

namespace attngan {

template <typename T>
BasicTensor<T> ParameterRegistry<T>::add(const std::string& name, Shape shape, ParamRole role) {
  if (contains(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  auto tensor = BasicTensor<T>::zeros(std::move(shape), true);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, tensor, role});
  return tensor;
}

template <typename T>
const BasicTensor<T>& ParameterRegistry<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw LookupError("unknown parameter: " + std::string(name));
  }
  return entries_[it->second].tensor;
}

template <typename T>
std::int64_t ParameterRegistry<T>::parameter_count(std::string_view prefix) const {
  std::int64_t total = 0;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) {
      total += e.tensor.numel();
    }
  }
  return total;
}

template <typename T>
std::vector<BasicTensor<T>> ParameterRegistry<T>::tensors(std::string_view prefix) const {
  std::vector<BasicTensor<T>> out;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) {
      out.push_back(e.tensor);
    }
  }
  return out;
}

template <typename T>
void ParameterRegistry<T>::set_requires_grad(std::string_view prefix, bool flag) {
  for (auto& e : entries_) {
    if (e.name.starts_with(prefix)) {
      e.tensor.set_requires_grad(flag);
    }
  }
}

template <typename T>
void init_parameters(ParameterRegistry<T>& registry, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (const auto& entry : registry.entries()) {
    auto tensor = entry.tensor;
    auto values = tensor.mutable_data();
    switch (entry.role) {
      case ParamRole::weight:
        for (auto& v : values) {
          v = static_cast<T>(normal(rng));
        }
        break;
      case ParamRole::gain:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case ParamRole::bias:
        std::fill(values.begin(), values.end(), T(0));
        break;
    }
  }
}

template <typename T>
Conv2dLayer<T> Conv2dLayer<T>::create(ParameterRegistry<T>& registry, const std::string& prefix, std::int64_t in,
                                      std::int64_t out, std::int64_t kernel, std::int64_t stride,
                                      std::int64_t padding) {
  Conv2dLayer layer;
  layer.weight = registry.add(prefix + ".weight", {out, in, kernel, kernel}, ParamRole::weight);
  layer.bias = registry.add(prefix + ".bias", {out}, ParamRole::bias);
  layer.options = {stride, padding};
  return layer;
}

template <typename T>
ConvTranspose2dLayer<T> ConvTranspose2dLayer<T>::create(ParameterRegistry<T>& registry, const std::string& prefix,
                                                        std::int64_t in, std::int64_t out, std::int64_t kernel,
                                                        std::int64_t stride, std::int64_t padding) {
  ConvTranspose2dLayer layer;
  layer.weight = registry.add(prefix + ".weight", {in, out, kernel, kernel}, ParamRole::weight);
  layer.bias = registry.add(prefix + ".bias", {out}, ParamRole::bias);
  layer.options = {stride, padding};
  return layer;
}

template <typename T>
InstanceNormLayer<T> InstanceNormLayer<T>::create(ParameterRegistry<T>& registry, const std::string& prefix,
                                                  std::int64_t channels) {
  InstanceNormLayer layer;
  layer.gain = registry.add(prefix + ".gain", {channels}, ParamRole::gain);
  layer.bias = registry.add(prefix + ".bias", {channels}, ParamRole::bias);
  return layer;
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::create(ParameterRegistry<T>& registry, const std::string& prefix,
                                          std::int64_t channels) {
  ResidualBlock block;
  block.channels = channels;
  block.norm1 = InstanceNormLayer<T>::create(registry, prefix + ".norm1", channels);
  block.conv1 = Conv2dLayer<T>::create(registry, prefix + ".conv1", channels, channels, 3, 1, 1);
  block.norm2 = InstanceNormLayer<T>::create(registry, prefix + ".norm2", channels);
  block.conv2 = Conv2dLayer<T>::create(registry, prefix + ".conv2", channels, channels, 3, 1, 1);
  return block;
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::forward(const BasicTensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError("residual_block: expected " + std::to_string(channels) + " channels, got input " +
                     shape_str(x.shape()));
  }
  auto h = conv1.forward(norm1.forward(x));
  h = conv2.forward(norm2.forward(relu(h)));
  return add(x, h);
}

#define ATTNGAN_INSTANTIATE_NN(T)                                      \
  template class ParameterRegistry<T>;                                 \
  template void init_parameters(ParameterRegistry<T>&, std::uint64_t); \
  template struct Conv2dLayer<T>;                                      \
  template struct ConvTranspose2dLayer<T>;                             \
  template struct InstanceNormLayer<T>;                                \
  template struct ResidualBlock<T>;

ATTNGAN_INSTANTIATE_NN(float)
ATTNGAN_INSTANTIATE_NN(double)

#undef ATTNGAN_INSTANTIATE_NN

}  // namespace attngan
