#ifndef ATTNGAN_NN_HPP_
#define ATTNGAN_NN_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attngan/ops.hpp"
#include "attngan/tensor.hpp"

namespace attngan {

enum class ParamRole { weight, gain, bias };

/// Ordered name → parameter map. Names are unique and hierarchical
/// ("gen_xy.enc1.weight"); iteration follows registration order.
template <typename T>
class ParameterRegistry {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;
    ParamRole role;
  };

  /// Registers a zero-filled tensor that requires a gradient.
  BasicTensor<T> add(const std::string& name, Shape shape, ParamRole role);

  const BasicTensor<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total number of scalars, optionally restricted to names starting with `prefix`.
  std::int64_t parameter_count(std::string_view prefix = {}) const;

  std::vector<BasicTensor<T>> tensors(std::string_view prefix = {}) const;

  void set_requires_grad(std::string_view prefix, bool flag);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// weights ~ Normal(0, 0.02), gains = 1, biases = 0, drawn in registration
/// order from a generator seeded with `seed`.
template <typename T>
void init_parameters(ParameterRegistry<T>& registry, std::uint64_t seed);

inline constexpr double kInitStd = 0.02;

template <typename T>
struct Conv2dLayer {
  BasicTensor<T> weight;  // out × in × k × k
  BasicTensor<T> bias;    // out
  ConvOptions options;

  static Conv2dLayer create(ParameterRegistry<T>& registry, const std::string& prefix, std::int64_t in,
                            std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t padding);
  BasicTensor<T> forward(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, options); }
};

template <typename T>
struct ConvTranspose2dLayer {
  BasicTensor<T> weight;  // in × out × k × k
  BasicTensor<T> bias;    // out
  ConvOptions options;

  static ConvTranspose2dLayer create(ParameterRegistry<T>& registry, const std::string& prefix,
                                     std::int64_t in, std::int64_t out, std::int64_t kernel,
                                     std::int64_t stride, std::int64_t padding);
  BasicTensor<T> forward(const BasicTensor<T>& x) const {
    return conv_transpose2d(x, weight, bias, options);
  }
};

template <typename T>
struct InstanceNormLayer {
  BasicTensor<T> gain;
  BasicTensor<T> bias;

  static InstanceNormLayer create(ParameterRegistry<T>& registry, const std::string& prefix,
                                  std::int64_t channels);
  BasicTensor<T> forward(const BasicTensor<T>& x) const { return instance_norm(x, gain, bias); }
};

/// x + conv(norm(relu(conv(norm(x))))) with 3×3 convolutions at constant width.
template <typename T>
struct ResidualBlock {
  std::int64_t channels = 0;
  InstanceNormLayer<T> norm1;
  Conv2dLayer<T> conv1;
  InstanceNormLayer<T> norm2;
  Conv2dLayer<T> conv2;

  static ResidualBlock create(ParameterRegistry<T>& registry, const std::string& prefix, std::int64_t channels);
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
};

}  // namespace attngan

#endif  // ATTNGAN_NN_HPP_
