#include "attngan/kernels.hpp"

#include <algorithm>
#include <vector>

#include "attngan/parallel.hpp"

namespace attngan::kernels {
namespace {

constexpr std::int64_t kBlockN = 256;
constexpr int kLanes = 8;

// Fixed-lane dot product: vectorizable without reassociating a single
// accumulator, and independent of the thread count.
template <typename T>
T lane_dot(const T* a, const T* b, std::int64_t n) {
  T lanes[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      lanes[l] += a[i + l] * b[i + l];
    }
  }
  T sum = T(0);
  for (int l = 0; l < kLanes; ++l) {
    sum += lanes[l];
  }
  for (; i < n; ++i) {
    sum += a[i] * b[i];
  }
  return sum;
}

// col[(c·K + kh)·K + kw][oh·OW + ow] = x[c][oh·s − p + kh][ow·s − p + kw]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const auto oh_n = g.out_h();
  const auto ow_n = g.out_w();
  const auto rows = g.patch();
  const auto kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static) if (rows * oh_n * ow_n > kParallelGrain)
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto c = r / kk;
    const auto kh = (r % kk) / g.kernel;
    const auto kw = r % g.kernel;
    const T* xc = x + c * g.in_h * g.in_w;
    T* out = col + r * oh_n * ow_n;
    for (std::int64_t oh = 0; oh < oh_n; ++oh) {
      const auto ih = oh * g.stride - g.padding + kh;
      T* orow = out + oh * ow_n;
      if (ih < 0 || ih >= g.in_h) {
        std::fill(orow, orow + ow_n, T(0));
        continue;
      }
      const T* xrow = xc + ih * g.in_w;
      for (std::int64_t ow = 0; ow < ow_n; ++ow) {
        const auto iw = ow * g.stride - g.padding + kw;
        orow[ow] = (iw >= 0 && iw < g.in_w) ? xrow[iw] : T(0);
      }
    }
  }
}

// Scatter-add of a column buffer back into image layout. Channels are
// independent, so each thread owns whole channels.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* x) {
  const auto oh_n = g.out_h();
  const auto ow_n = g.out_w();
  const auto kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static) if (g.patch() * oh_n * ow_n > kParallelGrain)
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    T* xc = x + c * g.in_h * g.in_w;
    for (std::int64_t kh = 0; kh < g.kernel; ++kh) {
      for (std::int64_t kw = 0; kw < g.kernel; ++kw) {
        const T* row = col + (c * kk + kh * g.kernel + kw) * oh_n * ow_n;
        for (std::int64_t oh = 0; oh < oh_n; ++oh) {
          const auto ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.in_h) {
            continue;
          }
          for (std::int64_t ow = 0; ow < ow_n; ++ow) {
            const auto iw = ow * g.stride - g.padding + kw;
            if (iw >= 0 && iw < g.in_w) {
              xc[ih * g.in_w + iw] += row[oh * ow_n + ow];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

}  // namespace

template <typename T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelGrain * 16)
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    std::fill(crow, crow + n, T(0));
    for (std::int64_t jb = 0; jb < n; jb += kBlockN) {
      const auto jend = std::min(n, jb + kBlockN);
      for (std::int64_t p = 0; p < k; ++p) {
        const T aip = a[i * k + p];
        const T* brow = b + p * n;
        for (std::int64_t j = jb; j < jend; ++j) {
          crow[j] += aip * brow[j];
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const auto pixels = g.out_h() * g.out_w();
  const auto in_size = g.in_channels * g.in_h * g.in_w;
  auto& col = scratch<T>();
  if (!is_pointwise(g)) {
    col.resize(static_cast<std::size_t>(g.patch() * pixels));
  }
  for (std::int64_t n = 0; n < g.batch; ++n) {
    const T* xn = x + n * in_size;
    const T* cols = xn;
    if (!is_pointwise(g)) {
      im2col(g, xn, col.data());
      cols = col.data();
    }
    T* yn = y + n * g.out_channels * pixels;
    gemm(g.out_channels, pixels, g.patch(), w, cols, yn);
    if (bias != nullptr) {
      for (std::int64_t o = 0; o < g.out_channels; ++o) {
        T* yo = yn + o * pixels;
        for (std::int64_t p = 0; p < pixels; ++p) {
          yo[p] += bias[o];
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const auto pixels = g.out_h() * g.out_w();
  const auto in_size = g.in_channels * g.in_h * g.in_w;
  const auto patch = g.patch();
  std::vector<T> wt(static_cast<std::size_t>(patch * g.out_channels));
  for (std::int64_t o = 0; o < g.out_channels; ++o) {
    for (std::int64_t r = 0; r < patch; ++r) {
      wt[r * g.out_channels + o] = w[o * patch + r];
    }
  }
  auto& col = scratch<T>();
  col.resize(static_cast<std::size_t>(patch * pixels));
  for (std::int64_t n = 0; n < g.batch; ++n) {
    gemm(patch, pixels, g.out_channels, wt.data(), dy + n * g.out_channels * pixels, col.data());
    T* dxn = dx + n * in_size;
    if (is_pointwise(g)) {
      for (std::int64_t i = 0; i < in_size; ++i) {
        dxn[i] += col[i];
      }
    } else {
      col2im_add(g, col.data(), dxn);
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const auto pixels = g.out_h() * g.out_w();
  const auto in_size = g.in_channels * g.in_h * g.in_w;
  const auto patch = g.patch();
  auto& col = scratch<T>();
  if (!is_pointwise(g)) {
    col.resize(static_cast<std::size_t>(patch * pixels));
  }
  for (std::int64_t n = 0; n < g.batch; ++n) {
    const T* cols = x + n * in_size;
    if (!is_pointwise(g)) {
      im2col(g, x + n * in_size, col.data());
      cols = col.data();
    }
    const T* dyn = dy + n * g.out_channels * pixels;
#pragma omp parallel for collapse(2) schedule(static) if (g.out_channels * patch * pixels > kParallelGrain * 16)
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t r = 0; r < patch; ++r) {
        dw[o * patch + r] += lane_dot(dyn + o * pixels, cols + r * pixels, pixels);
      }
    }
  }
}

namespace reference {

template <typename T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      T sum = T(0);
      for (std::int64_t p = 0; p < k; ++p) {
        sum += a[i * k + p] * b[p * n + j];
      }
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const auto oh_n = g.out_h();
  const auto ow_n = g.out_w();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t oh = 0; oh < oh_n; ++oh) {
        for (std::int64_t ow = 0; ow < ow_n; ++ow) {
          T sum = T(0);
          for (std::int64_t c = 0; c < g.in_channels; ++c) {
            for (std::int64_t kh = 0; kh < g.kernel; ++kh) {
              for (std::int64_t kw = 0; kw < g.kernel; ++kw) {
                const auto ih = oh * g.stride - g.padding + kh;
                const auto iw = ow * g.stride - g.padding + kw;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) {
                  continue;
                }
                sum += x[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] *
                       w[((o * g.in_channels + c) * g.kernel + kh) * g.kernel + kw];
              }
            }
          }
          if (bias != nullptr) {
            sum += bias[o];
          }
          y[((n * g.out_channels + o) * oh_n + oh) * ow_n + ow] = sum;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const auto oh_n = g.out_h();
  const auto ow_n = g.out_w();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t oh = 0; oh < oh_n; ++oh) {
        for (std::int64_t ow = 0; ow < ow_n; ++ow) {
          const T grad = dy[((n * g.out_channels + o) * oh_n + oh) * ow_n + ow];
          for (std::int64_t c = 0; c < g.in_channels; ++c) {
            for (std::int64_t kh = 0; kh < g.kernel; ++kh) {
              for (std::int64_t kw = 0; kw < g.kernel; ++kw) {
                const auto ih = oh * g.stride - g.padding + kh;
                const auto iw = ow * g.stride - g.padding + kw;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) {
                  continue;
                }
                dx[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] +=
                    grad * w[((o * g.in_channels + c) * g.kernel + kh) * g.kernel + kw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const auto oh_n = g.out_h();
  const auto ow_n = g.out_w();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t c = 0; c < g.in_channels; ++c) {
        for (std::int64_t kh = 0; kh < g.kernel; ++kh) {
          for (std::int64_t kw = 0; kw < g.kernel; ++kw) {
            T sum = T(0);
            for (std::int64_t oh = 0; oh < oh_n; ++oh) {
              for (std::int64_t ow = 0; ow < ow_n; ++ow) {
                const auto ih = oh * g.stride - g.padding + kh;
                const auto iw = ow * g.stride - g.padding + kw;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) {
                  continue;
                }
                sum += dy[((n * g.out_channels + o) * oh_n + oh) * ow_n + ow] *
                       x[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw];
              }
            }
            dw[((o * g.in_channels + c) * g.kernel + kh) * g.kernel + kw] += sum;
          }
        }
      }
    }
  }
}

}  // namespace reference

#define ATTNGAN_INSTANTIATE_KERNELS(T)                                                           \
  template void gemm<T>(std::int64_t, std::int64_t, std::int64_t, const T*, const T*, T*);       \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);        \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);           \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*);          \
  template void reference::gemm<T>(std::int64_t, std::int64_t, std::int64_t, const T*, const T*, \
                                   T*);                                                          \
  template void reference::conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*,  \
                                             T*);                                                \
  template void reference::conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*); \
  template void reference::conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*);

ATTNGAN_INSTANTIATE_KERNELS(float)
ATTNGAN_INSTANTIATE_KERNELS(double)

#undef ATTNGAN_INSTANTIATE_KERNELS

}  // namespace attngan::kernels
