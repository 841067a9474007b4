#ifndef ATTNGAN_KERNELS_HPP_
#define ATTNGAN_KERNELS_HPP_

#include <cstdint>

namespace attngan::kernels {

/// Geometry of a 2-D cross-correlation over N×C×H×W input with an O×C×K×K
/// kernel, symmetric zero padding and equal strides.
struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t in_h = 1;
  std::int64_t in_w = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  std::int64_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  std::int64_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  std::int64_t patch() const { return in_channels * kernel * kernel; }
};

// OpenMP kernels. Work is split over independent output elements only, so
// results are bitwise identical for every thread count.

/// c[M×N] = a[M×K] · b[K×N] (overwrites c).
template <typename T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c);

/// y = conv(x, w) + bias. `bias` may be null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

/// dx += convᵀ(dy, w), the adjoint of conv2d_forward with respect to x.
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx);

/// dw += Σ_n dy ⋆ x, the kernel gradient.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw);

/// Serial direct-loop versions kept as the test oracle for the kernels above.
namespace reference {

template <typename T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw);

}  // namespace reference

}  // namespace attngan::kernels

#endif  // ATTNGAN_KERNELS_HPP_
