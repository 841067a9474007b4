#include "attngan/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <string>

#include "attngan/kernels.hpp"
#include "attngan/parallel.hpp"

namespace attngan {
namespace {

std::atomic<bool> g_finite_check{false};
thread_local KinkProbe* t_probe = nullptr;

// Feeds the branch taken at each element (v > 0) to the active probe.
template <typename T>
void probe_signs(const BasicTensor<T>& x) {
  if (t_probe == nullptr) {
    return;
  }
  std::uint64_t word = 0;
  int bits = 0;
  for (auto v : x.data()) {
    word = (word << 1) | (v > T(0) ? 1U : 0U);
    if (++bits == 64) {
      t_probe->observe(word);
      word = 0;
      bits = 0;
    }
  }
  t_probe->observe(word ^ (static_cast<std::uint64_t>(bits) << 58));
}

template <typename T>
using Grads = std::span<std::vector<T>* const>;

template <typename T>
using BackwardFn = std::function<void(std::span<const T>, Grads<T>)>;

void require(bool ok, const std::string& message) {
  if (!ok) {
    throw ShapeError(message);
  }
}

template <typename T>
void check_finite(const char* op, const BasicTensor<T>& t) {
  if (!g_finite_check.load(std::memory_order_relaxed) || !t.defined()) {
    return;
  }
  for (auto v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite input value");
    }
  }
}

template <typename T>
void expect_rank4(const char* op, const BasicTensor<T>& x) {
  require(x.rank() == 4, std::string(op) + ": expected N×C×H×W input, got " + shape_str(x.shape()));
}

template <typename T>
BasicTensor<T> finish(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> out,
                      BackwardFn<T> fn) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) {
    return out;
  }
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const BasicTensor<T>& t) { return t.defined() && t.requires_grad(); });
  if (!any) {
    return out;
  }
  out.mark_recorded();
  tape->record(Node<T>{op, std::move(inputs), out, std::move(fn)});
  return out;
}

// Element-wise map with derivative df(x, y).
template <typename T, typename F, typename DF>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& x, F f, DF df) {
  check_finite(op, x);
  const auto in = x.data();
  const auto n = static_cast<std::int64_t>(in.size());
  std::vector<T> out(in.size());
#pragma omp parallel for schedule(static) if (n > kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = f(in[i]);
  }
  BasicTensor<T> y(x.shape(), std::move(out));
  return finish<T>(op, {x}, y, [x, y, df](std::span<const T> g, Grads<T> grads) {
    if (grads[0] == nullptr) {
      return;
    }
    const auto xd = x.data();
    const auto yd = y.data();
    auto& gx = *grads[0];
    const auto count = static_cast<std::int64_t>(g.size());
#pragma omp parallel for schedule(static) if (count > kParallelGrain)
    for (std::int64_t i = 0; i < count; ++i) {
      gx[i] += g[i] * df(xd[i], yd[i]);
    }
  });
}

enum class BinaryKind { add, sub, mul };

template <typename T>
BasicTensor<T> binary(const char* op, BinaryKind kind, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_finite(op, a);
  check_finite(op, b);
  const bool a_scalar = a.numel() == 1 && a.shape() != b.shape();
  const bool b_scalar = b.numel() == 1 && a.shape() != b.shape();
  require(a.shape() == b.shape() || a_scalar || b_scalar,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const auto ad = a.data();
  const auto bd = b.data();
  const auto n = shape_numel(shape);
  std::vector<T> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static) if (n > kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) {
    const T av = ad[a_scalar ? 0 : i];
    const T bv = bd[b_scalar ? 0 : i];
    out[i] = kind == BinaryKind::add ? av + bv : kind == BinaryKind::sub ? av - bv : av * bv;
  }
  BasicTensor<T> y(shape, std::move(out));
  return finish<T>(op, {a, b}, y, [a, b, kind, a_scalar, b_scalar](std::span<const T> g, Grads<T> grads) {
    const auto ad = a.data();
    const auto bd = b.data();
    const auto count = static_cast<std::int64_t>(g.size());
    if (grads[0] != nullptr) {
      auto& ga = *grads[0];
      for (std::int64_t i = 0; i < count; ++i) {
        const T d = kind == BinaryKind::mul ? g[i] * bd[b_scalar ? 0 : i] : g[i];
        ga[a_scalar ? 0 : i] += d;
      }
    }
    if (grads[1] != nullptr) {
      auto& gb = *grads[1];
      for (std::int64_t i = 0; i < count; ++i) {
        const T d = kind == BinaryKind::mul ? g[i] * ad[a_scalar ? 0 : i]
                    : kind == BinaryKind::sub ? -g[i]
                                              : g[i];
        gb[b_scalar ? 0 : i] += d;
      }
    }
  });
}

kernels::ConvGeometry conv_geometry(const Shape& in, const Shape& weight, ConvOptions options) {
  kernels::ConvGeometry g;
  g.batch = in[0];
  g.in_channels = in[1];
  g.in_h = in[2];
  g.in_w = in[3];
  g.out_channels = weight[0];
  g.kernel = weight[2];
  g.stride = options.stride;
  g.padding = options.padding;
  return g;
}

void check_conv_options(const char* op, ConvOptions options) {
  require(options.stride >= 1 && options.padding >= 0,
          std::string(op) + ": stride must be >= 1 and padding >= 0");
}

}  // namespace

KinkProbe::KinkProbe() : previous_(t_probe) { t_probe = this; }

KinkProbe::~KinkProbe() { t_probe = previous_; }

void KinkProbe::observe(std::uint64_t word) {
  for (int i = 0; i < 8; ++i) {
    hash_ ^= (word >> (8 * i)) & 0xffU;
    hash_ *= 0x100000001b3ULL;
  }
}

void set_finite_check(bool enabled) { g_finite_check.store(enabled); }
bool finite_check_enabled() { return g_finite_check.load(); }

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary("add", BinaryKind::add, a, b);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary("sub", BinaryKind::sub, a, b);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary("mul", BinaryKind::mul, a, b);
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
  return unary("add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T value) {
  return unary("mul_scalar", x, [value](T v) { return v * value; }, [value](T, T) { return value; });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_finite("matmul", a);
  check_finite("matmul", b);
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto m = a.dim(0);
  const auto k = a.dim(1);
  const auto n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  kernels::gemm(m, n, k, a.data().data(), b.data().data(), out.data());
  BasicTensor<T> y({m, n}, std::move(out));
  return finish<T>("matmul", {a, b}, y, [a, b, m, n, k](std::span<const T> g, Grads<T> grads) {
    if (grads[0] != nullptr) {
      // dA = g · Bᵀ
      std::vector<T> bt(static_cast<std::size_t>(n * k));
      const auto bd = b.data();
      for (std::int64_t p = 0; p < k; ++p) {
        for (std::int64_t j = 0; j < n; ++j) {
          bt[j * k + p] = bd[p * n + j];
        }
      }
      std::vector<T> da(static_cast<std::size_t>(m * k));
      kernels::gemm(m, k, n, g.data(), bt.data(), da.data());
      auto& ga = *grads[0];
      for (std::size_t i = 0; i < da.size(); ++i) {
        ga[i] += da[i];
      }
    }
    if (grads[1] != nullptr) {
      // dB = Aᵀ · g
      std::vector<T> at(static_cast<std::size_t>(k * m));
      const auto ad = a.data();
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
          at[p * m + i] = ad[i * k + p];
        }
      }
      std::vector<T> db(static_cast<std::size_t>(k * n));
      kernels::gemm(k, n, m, at.data(), g.data(), db.data());
      auto& gb = *grads[1];
      for (std::size_t i = 0; i < db.size(); ++i) {
        gb[i] += db[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      ConvOptions options) {
  check_finite("conv2d", x);
  check_finite("conv2d", weight);
  check_finite("conv2d", bias);
  check_conv_options("conv2d", options);
  expect_rank4("conv2d", x);
  require(weight.rank() == 4 && weight.dim(1) == x.dim(1) && weight.dim(2) == weight.dim(3),
          "conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " + shape_str(weight.shape()));
  require(!bias.defined() || bias.shape() == Shape{weight.dim(0)},
          "conv2d: bias " + (bias.defined() ? shape_str(bias.shape()) : std::string("-")) +
              " does not match kernel " + shape_str(weight.shape()));
  const auto g = conv_geometry(x.shape(), weight.shape(), options);
  require(x.dim(2) + 2 * options.padding >= g.kernel && x.dim(3) + 2 * options.padding >= g.kernel,
          "conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " + shape_str(x.shape()));
  const Shape out_shape{g.batch, g.out_channels, g.out_h(), g.out_w()};
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  kernels::conv2d_forward(g, x.data().data(), weight.data().data(),
                          bias.defined() ? bias.data().data() : nullptr, out.data());
  BasicTensor<T> y(out_shape, std::move(out));
  return finish<T>("conv2d", {x, weight, bias}, y, [x, weight, g](std::span<const T> grad, Grads<T> grads) {
    if (grads[0] != nullptr) {
      kernels::conv2d_backward_input(g, grad.data(), weight.data().data(), grads[0]->data());
    }
    if (grads[1] != nullptr) {
      kernels::conv2d_backward_weight(g, x.data().data(), grad.data(), grads[1]->data());
    }
    if (grads[2] != nullptr) {
      auto& gb = *grads[2];
      const auto pixels = g.out_h() * g.out_w();
      for (std::int64_t n = 0; n < g.batch; ++n) {
        for (std::int64_t o = 0; o < g.out_channels; ++o) {
          const T* row = grad.data() + (n * g.out_channels + o) * pixels;
          T sum = T(0);
          for (std::int64_t p = 0; p < pixels; ++p) {
            sum += row[p];
          }
          gb[o] += sum;
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias, ConvOptions options) {
  check_finite("conv_transpose2d", x);
  check_finite("conv_transpose2d", weight);
  check_finite("conv_transpose2d", bias);
  check_conv_options("conv_transpose2d", options);
  expect_rank4("conv_transpose2d", x);
  require(weight.rank() == 4 && weight.dim(0) == x.dim(1) && weight.dim(2) == weight.dim(3),
          "conv_transpose2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
              shape_str(weight.shape()));
  require(!bias.defined() || bias.shape() == Shape{weight.dim(1)},
          "conv_transpose2d: bias does not match kernel " + shape_str(weight.shape()));
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = weight.dim(1);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = options.stride;
  g.padding = options.padding;
  g.in_h = (x.dim(2) - 1) * g.stride - 2 * g.padding + g.kernel;
  g.in_w = (x.dim(3) - 1) * g.stride - 2 * g.padding + g.kernel;
  require(g.in_h > 0 && g.in_w > 0, "conv_transpose2d: padding too large for input " + shape_str(x.shape()));
  const Shape out_shape{g.batch, g.in_channels, g.in_h, g.in_w};
  const auto pixels = g.in_h * g.in_w;
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)), T(0));
  kernels::conv2d_backward_input(g, x.data().data(), weight.data().data(), out.data());
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t c = 0; c < g.in_channels; ++c) {
        T* row = out.data() + (n * g.in_channels + c) * pixels;
        for (std::int64_t p = 0; p < pixels; ++p) {
          row[p] += bd[c];
        }
      }
    }
  }
  BasicTensor<T> y(out_shape, std::move(out));
  return finish<T>("conv_transpose2d", {x, weight, bias}, y,
                   [x, weight, g, pixels](std::span<const T> grad, Grads<T> grads) {
                     if (grads[0] != nullptr) {
                       std::vector<T> dx(grads[0]->size());
                       kernels::conv2d_forward(g, grad.data(), weight.data().data(), static_cast<const T*>(nullptr),
                                               dx.data());
                       auto& gx = *grads[0];
                       for (std::size_t i = 0; i < dx.size(); ++i) {
                         gx[i] += dx[i];
                       }
                     }
                     if (grads[1] != nullptr) {
                       kernels::conv2d_backward_weight(g, grad.data(), x.data().data(), grads[1]->data());
                     }
                     if (grads[2] != nullptr) {
                       auto& gb = *grads[2];
                       for (std::int64_t n = 0; n < g.batch; ++n) {
                         for (std::int64_t c = 0; c < g.in_channels; ++c) {
                           const T* row = grad.data() + (n * g.in_channels + c) * pixels;
                           T sum = T(0);
                           for (std::int64_t p = 0; p < pixels; ++p) {
                             sum += row[p];
                           }
                           gb[c] += sum;
                         }
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  probe_signs(x);
  return unary("relu", x, [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
  probe_signs(x);
  return unary("leaky_relu", x, [slope](T v) { return v > T(0) ? v : v * slope; },
               [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return unary("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary("sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
  probe_signs(x);
  return unary("abs", x, [](T v) { return std::abs(v); },
               [](T v, T) { return v > T(0) ? T(1) : v < T(0) ? T(-1) : T(0); });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return unary("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> softmax_over_channel(const BasicTensor<T>& x) {
  check_finite("softmax_over_channel", x);
  expect_rank4("softmax_over_channel", x);
  const auto batch = x.dim(0);
  const auto channels = x.dim(1);
  const auto pixels = x.dim(2) * x.dim(3);
  const auto xd = x.data();
  std::vector<T> out(xd.size());
#pragma omp parallel for schedule(static) if (batch * pixels * channels > kParallelGrain)
  for (std::int64_t np = 0; np < batch * pixels; ++np) {
    const auto n = np / pixels;
    const auto p = np % pixels;
    const T* in = xd.data() + n * channels * pixels + p;
    T* o = out.data() + n * channels * pixels + p;
    T peak = in[0];
    for (std::int64_t c = 1; c < channels; ++c) {
      peak = std::max(peak, in[c * pixels]);
    }
    T total = T(0);
    for (std::int64_t c = 0; c < channels; ++c) {
      o[c * pixels] = std::exp(in[c * pixels] - peak);
      total += o[c * pixels];
    }
    for (std::int64_t c = 0; c < channels; ++c) {
      o[c * pixels] /= total;
    }
  }
  BasicTensor<T> y(x.shape(), std::move(out));
  return finish<T>("softmax_over_channel", {x}, y,
                   [y, batch, channels, pixels](std::span<const T> g, Grads<T> grads) {
                     if (grads[0] == nullptr) {
                       return;
                     }
                     const auto yd = y.data();
                     auto& gx = *grads[0];
#pragma omp parallel for schedule(static) if (batch * pixels * channels > kParallelGrain)
                     for (std::int64_t np = 0; np < batch * pixels; ++np) {
                       const auto base = (np / pixels) * channels * pixels + np % pixels;
                       T dot = T(0);
                       for (std::int64_t c = 0; c < channels; ++c) {
                         dot += g[base + c * pixels] * yd[base + c * pixels];
                       }
                       for (std::int64_t c = 0; c < channels; ++c) {
                         const auto i = base + c * pixels;
                         gx[i] += yd[i] * (g[i] - dot);
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                             T epsilon) {
  check_finite("instance_norm", x);
  check_finite("instance_norm", gain);
  check_finite("instance_norm", bias);
  expect_rank4("instance_norm", x);
  const auto batch = x.dim(0);
  const auto channels = x.dim(1);
  const auto pixels = x.dim(2) * x.dim(3);
  require(!gain.defined() || gain.shape() == Shape{channels},
          "instance_norm: gain shape does not match input " + shape_str(x.shape()));
  require(!bias.defined() || bias.shape() == Shape{channels},
          "instance_norm: bias shape does not match input " + shape_str(x.shape()));
  const auto xd = x.data();
  std::vector<T> normalized(xd.size());
  std::vector<T> inv_std(static_cast<std::size_t>(batch * channels));
  std::vector<T> out(xd.size());
#pragma omp parallel for schedule(static) if (batch * channels * pixels > kParallelGrain)
  for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
    const T* in = xd.data() + nc * pixels;
    double sum = 0.0;
    for (std::int64_t p = 0; p < pixels; ++p) {
      sum += in[p];
    }
    const double mu = sum / static_cast<double>(pixels);
    double sq = 0.0;
    for (std::int64_t p = 0; p < pixels; ++p) {
      const double d = in[p] - mu;
      sq += d * d;
    }
    const double var = sq / static_cast<double>(pixels);
    const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
    inv_std[nc] = istd;
    const auto c = nc % channels;
    const T scale = gain.defined() ? gain.data()[c] : T(1);
    const T shift = bias.defined() ? bias.data()[c] : T(0);
    T* nrm = normalized.data() + nc * pixels;
    T* o = out.data() + nc * pixels;
    for (std::int64_t p = 0; p < pixels; ++p) {
      nrm[p] = static_cast<T>(in[p] - mu) * istd;
      o[p] = nrm[p] * scale + shift;
    }
  }
  BasicTensor<T> y(x.shape(), std::move(out));
  return finish<T>(
      "instance_norm", {x, gain, bias}, y,
      [gain, normalized = std::move(normalized), inv_std = std::move(inv_std), batch, channels, pixels](
          std::span<const T> g, Grads<T> grads) {
        if (grads[0] != nullptr) {
          auto& gx = *grads[0];
#pragma omp parallel for schedule(static) if (batch * channels * pixels > kParallelGrain)
          for (std::int64_t nc = 0; nc < batch * channels; ++nc) {
            const T scale = gain.defined() ? gain.data()[nc % channels] : T(1);
            const T* gy = g.data() + nc * pixels;
            const T* nrm = normalized.data() + nc * pixels;
            double m1 = 0.0;
            double m2 = 0.0;
            for (std::int64_t p = 0; p < pixels; ++p) {
              const double gn = static_cast<double>(gy[p]) * scale;
              m1 += gn;
              m2 += gn * nrm[p];
            }
            m1 /= static_cast<double>(pixels);
            m2 /= static_cast<double>(pixels);
            for (std::int64_t p = 0; p < pixels; ++p) {
              const double gn = static_cast<double>(gy[p]) * scale;
              gx[nc * pixels + p] += static_cast<T>(inv_std[nc] * (gn - m1 - nrm[p] * m2));
            }
          }
        }
        if (grads[1] != nullptr || grads[2] != nullptr) {
          for (std::int64_t c = 0; c < channels; ++c) {
            T dgain = T(0);
            T dbias = T(0);
            for (std::int64_t n = 0; n < batch; ++n) {
              const auto nc = n * channels + c;
              for (std::int64_t p = 0; p < pixels; ++p) {
                dgain += g[nc * pixels + p] * normalized[nc * pixels + p];
                dbias += g[nc * pixels + p];
              }
            }
            if (grads[1] != nullptr) {
              (*grads[1])[c] += dgain;
            }
            if (grads[2] != nullptr) {
              (*grads[2])[c] += dbias;
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  check_finite("mean", x);
  double sum = 0.0;
  for (auto v : x.data()) {
    sum += v;
  }
  const auto n = x.numel();
  BasicTensor<T> y = BasicTensor<T>::scalar(static_cast<T>(sum / static_cast<double>(n)));
  return finish<T>("mean", {x}, y, [n](std::span<const T> g, Grads<T> grads) {
    if (grads[0] == nullptr) {
      return;
    }
    const T share = g[0] / static_cast<T>(n);
    for (auto& v : *grads[0]) {
      v += share;
    }
  });
}

template <typename T>
BasicTensor<T> pad(const BasicTensor<T>& x, Padding padding) {
  check_finite("pad", x);
  expect_rank4("pad", x);
  require(padding.top >= 0 && padding.bottom >= 0 && padding.left >= 0 && padding.right >= 0,
          "pad: negative padding");
  const auto nc = x.dim(0) * x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  const auto oh = h + padding.top + padding.bottom;
  const auto ow = w + padding.left + padding.right;
  std::vector<T> out(static_cast<std::size_t>(nc * oh * ow), T(0));
  const auto xd = x.data();
  for (std::int64_t i = 0; i < nc; ++i) {
    for (std::int64_t r = 0; r < h; ++r) {
      std::copy_n(xd.data() + (i * h + r) * w, w,
                  out.data() + (i * oh + r + padding.top) * ow + padding.left);
    }
  }
  BasicTensor<T> y({x.dim(0), x.dim(1), oh, ow}, std::move(out));
  return finish<T>("pad", {x}, y, [nc, h, w, oh, ow, padding](std::span<const T> g, Grads<T> grads) {
    if (grads[0] == nullptr) {
      return;
    }
    auto& gx = *grads[0];
    for (std::int64_t i = 0; i < nc; ++i) {
      for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) {
          gx[(i * h + r) * w + c] += g[(i * oh + r + padding.top) * ow + c + padding.left];
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& x, std::int64_t top, std::int64_t left, std::int64_t height,
                    std::int64_t width) {
  check_finite("crop", x);
  expect_rank4("crop", x);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  require(top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= h && left + width <= w,
          "crop: window out of bounds for input " + shape_str(x.shape()));
  const auto nc = x.dim(0) * x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(nc * height * width));
  const auto xd = x.data();
  for (std::int64_t i = 0; i < nc; ++i) {
    for (std::int64_t r = 0; r < height; ++r) {
      std::copy_n(xd.data() + (i * h + top + r) * w + left, width, out.data() + (i * height + r) * width);
    }
  }
  BasicTensor<T> y({x.dim(0), x.dim(1), height, width}, std::move(out));
  return finish<T>("crop", {x}, y, [nc, h, w, top, left, height, width](std::span<const T> g, Grads<T> grads) {
    if (grads[0] == nullptr) {
      return;
    }
    auto& gx = *grads[0];
    for (std::int64_t i = 0; i < nc; ++i) {
      for (std::int64_t r = 0; r < height; ++r) {
        for (std::int64_t c = 0; c < width; ++c) {
          gx[(i * h + top + r) * w + left + c] += g[(i * height + r) * width + c];
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, std::int64_t factor) {
  check_finite("upsample_nearest", x);
  expect_rank4("upsample_nearest", x);
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const auto nc = x.dim(0) * x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  const auto oh = h * factor;
  const auto ow = w * factor;
  std::vector<T> out(static_cast<std::size_t>(nc * oh * ow));
  const auto xd = x.data();
#pragma omp parallel for schedule(static) if (nc * oh * ow > kParallelGrain)
  for (std::int64_t i = 0; i < nc; ++i) {
    for (std::int64_t r = 0; r < oh; ++r) {
      const T* src = xd.data() + (i * h + r / factor) * w;
      T* dst = out.data() + (i * oh + r) * ow;
      for (std::int64_t c = 0; c < ow; ++c) {
        dst[c] = src[c / factor];
      }
    }
  }
  BasicTensor<T> y({x.dim(0), x.dim(1), oh, ow}, std::move(out));
  return finish<T>("upsample_nearest", {x}, y, [nc, h, w, factor](std::span<const T> g, Grads<T> grads) {
    if (grads[0] == nullptr) {
      return;
    }
    auto& gx = *grads[0];
    const auto oh = h * factor;
    const auto ow = w * factor;
#pragma omp parallel for schedule(static) if (nc * oh * ow > kParallelGrain)
    for (std::int64_t i = 0; i < nc; ++i) {
      for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) {
          T sum = T(0);
          for (std::int64_t dr = 0; dr < factor; ++dr) {
            for (std::int64_t dc = 0; dc < factor; ++dc) {
              sum += g[(i * oh + r * factor + dr) * ow + c * factor + dc];
            }
          }
          gx[(i * h + r) * w + c] += sum;
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  for (const auto& p : parts) {
    check_finite("concat_channels", p);
    expect_rank4("concat_channels", p);
    require(p.dim(0) == parts[0].dim(0) && p.dim(2) == parts[0].dim(2) && p.dim(3) == parts[0].dim(3),
            "concat_channels: shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
  }
  const auto batch = parts[0].dim(0);
  const auto pixels = parts[0].dim(2) * parts[0].dim(3);
  std::int64_t channels = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(channels);
    channels += p.dim(1);
  }
  std::vector<T> out(static_cast<std::size_t>(batch * channels * pixels));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pc = parts[k].dim(1);
    const auto pd = parts[k].data();
    for (std::int64_t n = 0; n < batch; ++n) {
      std::copy_n(pd.data() + n * pc * pixels, pc * pixels,
                  out.data() + (n * channels + offsets[k]) * pixels);
    }
  }
  BasicTensor<T> y({batch, channels, parts[0].dim(2), parts[0].dim(3)}, std::move(out));
  std::vector<BasicTensor<T>> inputs(parts.begin(), parts.end());
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    widths.push_back(p.dim(1));
  }
  return finish<T>("concat_channels", std::move(inputs), y,
                   [batch, channels, pixels, offsets, widths](std::span<const T> g, Grads<T> grads) {
                     for (std::size_t k = 0; k < grads.size(); ++k) {
                       if (grads[k] == nullptr) {
                         continue;
                       }
                       auto& gk = *grads[k];
                       const auto pc = widths[k];
                       for (std::int64_t n = 0; n < batch; ++n) {
                         const T* src = g.data() + (n * channels + offsets[k]) * pixels;
                         T* dst = gk.data() + n * pc * pixels;
                         for (std::int64_t i = 0; i < pc * pixels; ++i) {
                           dst[i] += src[i];
                         }
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t start, std::int64_t count) {
  check_finite("slice_channels", x);
  expect_rank4("slice_channels", x);
  const auto channels = x.dim(1);
  require(start >= 0 && count >= 1 && start + count <= channels,
          "slice_channels: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
              ") out of bounds for " + shape_str(x.shape()));
  const auto batch = x.dim(0);
  const auto pixels = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(batch * count * pixels));
  const auto xd = x.data();
  for (std::int64_t n = 0; n < batch; ++n) {
    std::copy_n(xd.data() + (n * channels + start) * pixels, count * pixels, out.data() + n * count * pixels);
  }
  BasicTensor<T> y({batch, count, x.dim(2), x.dim(3)}, std::move(out));
  return finish<T>("slice_channels", {x}, y,
                   [batch, channels, pixels, start, count](std::span<const T> g, Grads<T> grads) {
                     if (grads[0] == nullptr) {
                       return;
                     }
                     auto& gx = *grads[0];
                     for (std::int64_t n = 0; n < batch; ++n) {
                       const T* src = g.data() + n * count * pixels;
                       T* dst = gx.data() + (n * channels + start) * pixels;
                       for (std::int64_t i = 0; i < count * pixels; ++i) {
                         dst[i] += src[i];
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  BasicTensor<T> y = x.view_as(std::move(shape));
  return finish<T>("reshape", {x}, y, [](std::span<const T> g, Grads<T> grads) {
    if (grads[0] == nullptr) {
      return;
    }
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i];
    }
  });
}

template <typename T>
BasicTensor<T> attention_fuse(const BasicTensor<T>& attention, const BasicTensor<T>& content,
                              const BasicTensor<T>& input) {
  check_finite("attention_fuse", attention);
  check_finite("attention_fuse", content);
  check_finite("attention_fuse", input);
  expect_rank4("attention_fuse", attention);
  expect_rank4("attention_fuse", content);
  expect_rank4("attention_fuse", input);
  const auto batch = input.dim(0);
  const auto masks = attention.dim(1);
  const auto h = input.dim(2);
  const auto w = input.dim(3);
  require(input.dim(1) == 3, "attention_fuse: input must have 3 channels, got " + shape_str(input.shape()));
  require(masks >= 2 && attention.shape() == Shape{batch, masks, h, w},
          "attention_fuse: attention " + shape_str(attention.shape()) + " incompatible with input " +
              shape_str(input.shape()));
  require(content.shape() == Shape{batch, 3 * (masks - 1), h, w},
          "attention_fuse: content " + shape_str(content.shape()) + " incompatible with attention " +
              shape_str(attention.shape()));
  const auto pixels = h * w;
  const auto ad = attention.data();
  const auto cd = content.data();
  const auto xd = input.data();
  std::vector<T> out(static_cast<std::size_t>(batch * 3 * pixels));
#pragma omp parallel for schedule(static) if (batch * 3 * pixels * masks > kParallelGrain)
  for (std::int64_t nch = 0; nch < batch * 3; ++nch) {
    const auto n = nch / 3;
    const auto ch = nch % 3;
    const T* att = ad.data() + n * masks * pixels;
    const T* con = cd.data() + n * 3 * (masks - 1) * pixels;
    const T* in = xd.data() + (n * 3 + ch) * pixels;
    T* o = out.data() + (n * 3 + ch) * pixels;
    for (std::int64_t p = 0; p < pixels; ++p) {
      T acc = T(0);
      for (std::int64_t i = 0; i + 1 < masks; ++i) {
        acc += con[(3 * i + ch) * pixels + p] * att[i * pixels + p];
      }
      o[p] = acc + in[p] * att[(masks - 1) * pixels + p];
    }
  }
  BasicTensor<T> y({batch, 3, h, w}, std::move(out));
  return finish<T>(
      "attention_fuse", {attention, content, input}, y,
      [attention, content, input, batch, masks, pixels](std::span<const T> g, Grads<T> grads) {
        const auto ad = attention.data();
        const auto cd = content.data();
        const auto xd = input.data();
        for (std::int64_t n = 0; n < batch; ++n) {
          const T* att = ad.data() + n * masks * pixels;
          const T* con = cd.data() + n * 3 * (masks - 1) * pixels;
          const T* in = xd.data() + n * 3 * pixels;
          const T* gy = g.data() + n * 3 * pixels;
          const auto bg = (masks - 1) * pixels;
          for (std::int64_t p = 0; p < pixels; ++p) {
            if (grads[0] != nullptr) {
              T* ga = grads[0]->data() + n * masks * pixels;
              for (std::int64_t i = 0; i + 1 < masks; ++i) {
                T s = T(0);
                for (std::int64_t ch = 0; ch < 3; ++ch) {
                  s += gy[ch * pixels + p] * con[(3 * i + ch) * pixels + p];
                }
                ga[i * pixels + p] += s;
              }
              T s = T(0);
              for (std::int64_t ch = 0; ch < 3; ++ch) {
                s += gy[ch * pixels + p] * in[ch * pixels + p];
              }
              ga[bg + p] += s;
            }
            if (grads[1] != nullptr) {
              T* gc = grads[1]->data() + n * 3 * (masks - 1) * pixels;
              for (std::int64_t i = 0; i + 1 < masks; ++i) {
                for (std::int64_t ch = 0; ch < 3; ++ch) {
                  gc[(3 * i + ch) * pixels + p] += gy[ch * pixels + p] * att[i * pixels + p];
                }
              }
            }
            if (grads[2] != nullptr) {
              T* gx = grads[2]->data() + n * 3 * pixels;
              for (std::int64_t ch = 0; ch < 3; ++ch) {
                gx[ch * pixels + p] += gy[ch * pixels + p] * att[bg + p];
              }
            }
          }
        }
      });
}

#define ATTNGAN_INSTANTIATE_OPS(T)                                                                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                 ConvOptions);                                                         \
  template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                           const BasicTensor<T>&, ConvOptions);                        \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                              \
  template BasicTensor<T> abs(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> square(const BasicTensor<T>&);                                               \
  template BasicTensor<T> softmax_over_channel(const BasicTensor<T>&);                                 \
  template BasicTensor<T> instance_norm(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                        const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> pad(const BasicTensor<T>&, Padding);                                         \
  template BasicTensor<T> crop(const BasicTensor<T>&, std::int64_t, std::int64_t, std::int64_t,        \
                               std::int64_t);                                                          \
  template BasicTensor<T> upsample_nearest(const BasicTensor<T>&, std::int64_t);                       \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);                            \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::int64_t, std::int64_t);           \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                       \
  template BasicTensor<T> attention_fuse(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                         const BasicTensor<T>&);

ATTNGAN_INSTANTIATE_OPS(float)
ATTNGAN_INSTANTIATE_OPS(double)

#undef ATTNGAN_INSTANTIATE_OPS

}  // namespace attngan
