#ifndef ATTNGAN_OPS_HPP_
#define ATTNGAN_OPS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "attngan/autograd.hpp"
#include "attngan/tensor.hpp"

namespace attngan {

// Differentiable tensor operations. Every op records a Node on the active
// tape when at least one input requires a gradient. Layout is N×C×H×W for
// all image-shaped ops. Binary element-wise ops accept identical shapes, or
// a one-element tensor on either side; there is no other broadcasting.

struct ConvOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

struct Padding {
  std::int64_t top = 0;
  std::int64_t bottom = 0;
  std::int64_t left = 0;
  std::int64_t right = 0;
};

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEpsilon = 1e-5;

/// When enabled, every op rejects non-finite inputs with NumericError.
void set_finite_check(bool enabled);
bool finite_check_enabled();

/// While alive, folds the sign pattern of every relu, leaky_relu and abs
/// input evaluated on this thread into a hash. Two evaluations with equal
/// signatures took the same branch at every kink.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  std::uint64_t signature() const { return hash_; }
  void observe(std::uint64_t word);

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  KinkProbe* previous_;
};

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value);
template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T value);

/// [M×K] · [K×N]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Cross-correlation of N×C×H×W input with an O×C×k×k kernel; `bias` (length
/// O) may be an undefined tensor.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, ConvOptions options = {});

/// Adjoint of conv2d with the same O×C×k×k kernel: maps N×O×H×W to
/// N×C×((H−1)·stride − 2·padding + k)×(...). `bias` has length C.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, ConvOptions options = {});

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope = T(kLeakySlope));
template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x);

/// Softmax across the C axis at every (n, h, w).
template <typename T>
BasicTensor<T> softmax_over_channel(const BasicTensor<T>& x);

/// Per-(sample, channel) standardization with biased variance, followed by
/// an optional per-channel affine map. `gain`/`bias` may be undefined.
template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                             const BasicTensor<T>& bias, T epsilon = T(kNormEpsilon));

/// Mean of all elements, as a one-element tensor.
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

/// Zero padding of the two spatial axes.
template <typename T>
BasicTensor<T> pad(const BasicTensor<T>& x, Padding padding);

/// Spatial window [top, top+height) × [left, left+width).
template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& x, std::int64_t top, std::int64_t left,
                    std::int64_t height, std::int64_t width);

template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, std::int64_t factor = 2);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts);

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t start, std::int64_t count);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

/// Attention fusion of n masks: attention N×n×H×W, content N×3(n−1)×H×W,
/// input N×3×H×W. Output Σᵢ contentᵢ⊙attentionᵢ + input⊙attention_last,
/// accumulated in mask order.
template <typename T>
BasicTensor<T> attention_fuse(const BasicTensor<T>& attention, const BasicTensor<T>& content,
                              const BasicTensor<T>& input);

}  // namespace attngan

#endif  // ATTNGAN_OPS_HPP_
