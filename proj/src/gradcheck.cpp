#include "attngan/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>

#include "attngan/autograd.hpp"
#include "attngan/losses.hpp"
#include "attngan/model.hpp"
#include "attngan/noise.hpp"
#include "attngan/ops.hpp"

namespace attngan {

namespace {

using T64 = Tensor64;

struct Problem {
  std::vector<T64> leaves;
  std::function<T64(const std::vector<T64>&)> fn;
  std::shared_ptr<void> keep_alive;  // owns modules referenced by fn
};

using Builder = std::function<Problem(std::mt19937_64&)>;

struct Check {
  std::string name;
  bool directional;
  Builder build;
};

T64 random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> normal(0.0, scale);
  const auto n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    x = normal(rng);
  }
  return T64(std::move(shape), std::move(v), requires_grad);
}

T64 uniform_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const auto n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    x = u(rng);
  }
  return T64(std::move(shape), std::move(v), true);
}

Problem unary_problem(std::mt19937_64& rng, T64 (*op)(const T64&)) {
  return {{random_tensor(rng, {2, 3, 3, 3})}, [op](const auto& in) { return op(in[0]); }, nullptr};
}

void randomize_parameters(ParameterRegistry<double>& registry, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 0.3);
  for (const auto& e : registry.entries()) {
    auto t = e.tensor;
    for (auto& v : t.mutable_data()) {
      v = normal(rng) + (e.role == ParamRole::gain ? 1.0 : 0.0);
    }
  }
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.image_size = 8;
  c.n_masks = 3;
  c.residual_blocks = 1;
  c.base_channels = 2;
  c.discriminator_layers = 3;
  return c;
}

template <typename Module>
struct Owned {
  ParameterRegistry<double> registry;
  std::unique_ptr<Module> module;
};

std::vector<T64> with_input(const ParameterRegistry<double>& registry, std::vector<T64> inputs) {
  auto leaves = registry.tensors();
  leaves.insert(leaves.end(), inputs.begin(), inputs.end());
  return leaves;
}

const std::vector<Check>& registry() {
  static const std::vector<Check> checks = [] {
    std::vector<Check> c;
    auto op = [&c](std::string name, Builder b) { c.push_back({std::move(name), false, std::move(b)}); };
    auto net = [&c](std::string name, Builder b) { c.push_back({std::move(name), true, std::move(b)}); };

    op("add", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 3, 2, 2}), random_tensor(rng, {2, 3, 2, 2})},
                     [](const auto& in) { return add(in[0], in[1]); }, nullptr};
    });
    op("add_broadcast", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 3, 2, 2}), random_tensor(rng, {1})},
                     [](const auto& in) { return add(in[0], in[1]); }, nullptr};
    });
    op("sub", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 3, 2, 2}), random_tensor(rng, {2, 3, 2, 2})},
                     [](const auto& in) { return sub(in[0], in[1]); }, nullptr};
    });
    op("mul", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 3, 2, 2}), random_tensor(rng, {2, 3, 2, 2})},
                     [](const auto& in) { return mul(in[0], in[1]); }, nullptr};
    });
    op("mul_broadcast", [](auto& rng) {
      return Problem{{random_tensor(rng, {1}), random_tensor(rng, {2, 3, 2, 2})},
                     [](const auto& in) { return mul(in[0], in[1]); }, nullptr};
    });
    op("add_scalar", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 5})}, [](const auto& in) { return add_scalar(in[0], 0.7); }, nullptr};
    });
    op("mul_scalar", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 5})}, [](const auto& in) { return mul_scalar(in[0], -1.3); }, nullptr};
    });
    op("matmul", [](auto& rng) {
      return Problem{{random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5})},
                     [](const auto& in) { return matmul(in[0], in[1]); }, nullptr};
    });
    op("conv2d", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})},
                     [](const auto& in) { return conv2d(in[0], in[1], in[2], {1, 1}); }, nullptr};
    });
    op("conv2d_strided", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 2, 6, 6}), random_tensor(rng, {2, 2, 4, 4}), random_tensor(rng, {2})},
                     [](const auto& in) { return conv2d(in[0], in[1], in[2], {2, 1}); }, nullptr};
    });
    op("conv2d_pointwise", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 3, 3, 3}), random_tensor(rng, {2, 3, 1, 1}), random_tensor(rng, {2})},
                     [](const auto& in) { return conv2d(in[0], in[1], in[2], {1, 0}); }, nullptr};
    });
    op("conv_transpose2d", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 3, 3, 3}), random_tensor(rng, {3, 2, 4, 4}), random_tensor(rng, {2})},
                     [](const auto& in) { return conv_transpose2d(in[0], in[1], in[2], {2, 1}); }, nullptr};
    });
    op("relu", [](auto& rng) { return unary_problem(rng, [](const T64& x) { return relu(x); }); });
    op("leaky_relu", [](auto& rng) { return unary_problem(rng, [](const T64& x) { return leaky_relu(x); }); });
    op("tanh", [](auto& rng) { return unary_problem(rng, [](const T64& x) { return attngan::tanh(x); }); });
    op("sigmoid", [](auto& rng) { return unary_problem(rng, [](const T64& x) { return sigmoid(x); }); });
    op("abs", [](auto& rng) { return unary_problem(rng, [](const T64& x) { return attngan::abs(x); }); });
    op("square", [](auto& rng) { return unary_problem(rng, [](const T64& x) { return square(x); }); });
    op("softmax_over_channel",
       [](auto& rng) { return unary_problem(rng, [](const T64& x) { return softmax_over_channel(x); }); });
    op("instance_norm", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 3, 3, 3}), random_tensor(rng, {3}), random_tensor(rng, {3})},
                     [](const auto& in) { return instance_norm(in[0], in[1], in[2]); }, nullptr};
    });
    op("mean", [](auto& rng) { return unary_problem(rng, [](const T64& x) { return mean(x); }); });
    op("pad", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 2, 3, 3})},
                     [](const auto& in) { return pad(in[0], Padding{1, 2, 1, 2}); }, nullptr};
    });
    op("crop", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 2, 5, 5})}, [](const auto& in) { return crop(in[0], 1, 2, 3, 2); },
                     nullptr};
    });
    op("upsample_nearest", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 2, 3, 3})}, [](const auto& in) { return upsample_nearest(in[0], 2); },
                     nullptr};
    });
    op("concat_channels", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 1, 3, 3}), random_tensor(rng, {2, 3, 3, 3})},
                     [](const auto& in) { return concat_channels<double>(in); }, nullptr};
    });
    op("slice_channels", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 4, 3, 3})}, [](const auto& in) { return slice_channels(in[0], 1, 2); },
                     nullptr};
    });
    op("reshape", [](auto& rng) {
      return Problem{{random_tensor(rng, {2, 3, 2, 2})}, [](const auto& in) { return reshape(in[0], {6, 4}); },
                     nullptr};
    });
    op("attention_fuse", [](auto& rng) {
      return Problem{{uniform_tensor(rng, {1, 3, 3, 3}, 0.0, 1.0), random_tensor(rng, {1, 6, 3, 3}),
                      random_tensor(rng, {1, 3, 3, 3})},
                     [](const auto& in) { return attention_fuse(in[0], in[1], in[2]); }, nullptr};
    });
    op("adversarial_g", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 1, 3, 3})}, [](const auto& in) { return adversarial_g(in[0]); },
                     nullptr};
    });
    op("adversarial_d", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 1, 3, 3}), random_tensor(rng, {1, 1, 3, 3})},
                     [](const auto& in) { return adversarial_d(in[0], in[1]); }, nullptr};
    });
    op("cycle_loss", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 3, 3, 3}), random_tensor(rng, {1, 3, 3, 3})},
                     [](const auto& in) { return cycle_loss(in[0], in[1]); }, nullptr};
    });
    op("pixel_loss", [](auto& rng) {
      return Problem{{random_tensor(rng, {1, 3, 3, 3}), random_tensor(rng, {1, 3, 3, 3})},
                     [](const auto& in) { return pixel_loss(in[0], in[1]); }, nullptr};
    });

    net("residual_block", [](auto& rng) {
      auto owned = std::make_shared<Owned<ResidualBlock<double>>>();
      owned->module = std::make_unique<ResidualBlock<double>>(
          ResidualBlock<double>::create(owned->registry, "res", 3));
      randomize_parameters(owned->registry, rng);
      auto* block = owned->module.get();
      return Problem{with_input(owned->registry, {random_tensor(rng, {1, 3, 4, 4})}),
                     [block](const auto& in) { return block->forward(in.back()); }, owned};
    });
    net("generator", [](auto& rng) {
      auto owned = std::make_shared<Owned<Generator<double>>>();
      owned->module = std::make_unique<Generator<double>>(owned->registry, "gen", tiny_model());
      randomize_parameters(owned->registry, rng);
      auto* gen = owned->module.get();
      return Problem{with_input(owned->registry, {random_tensor(rng, {1, 3, 8, 8})}),
                     [gen](const auto& in) {
                       const auto out = (*gen)(in.back());
                       const T64 parts[] = {out.fused, out.attention};
                       return concat_channels<double>(parts);
                     },
                     owned};
    });
    net("discriminator", [](auto& rng) {
      auto owned = std::make_shared<Owned<Discriminator<double>>>();
      owned->module = std::make_unique<Discriminator<double>>(owned->registry, "d", 3, tiny_model());
      randomize_parameters(owned->registry, rng);
      auto* d = owned->module.get();
      return Problem{with_input(owned->registry, {random_tensor(rng, {1, 3, 8, 8})}),
                     [d](const auto& in) { return (*d)(in.back()); }, owned};
    });
    for (const auto combine : {MaskCombine::concat, MaskCombine::multiply}) {
      const std::string suffix = combine == MaskCombine::concat ? "" : "_multiply";
      net("attended_discriminator" + suffix, [combine](auto& rng) {
        auto owned = std::make_shared<Owned<AttendedDiscriminator<double>>>();
        auto config = tiny_model();
        config.mask_combine = combine;
        owned->module = std::make_unique<AttendedDiscriminator<double>>(owned->registry, "da", config);
        randomize_parameters(owned->registry, rng);
        auto* d = owned->module.get();
        return Problem{with_input(owned->registry,
                                  {random_tensor(rng, {1, 3, 8, 8}), uniform_tensor(rng, {1, 1, 8, 8}, 0.0, 1.0)}),
                       [d](const auto& in) { return (*d)(in[in.size() - 2], in.back()); }, owned};
      });
    }
    return c;
  }();
  return checks;
}

struct Evaluated {
  double value;
  std::uint64_t signature;
};

// f = mean(fn(leaves) ⊙ R), evaluated without recording.
Evaluated evaluate_objective(const Problem& p, const T64& r) {
  TapeScope<double> no_tape(nullptr);
  KinkProbe probe;
  const double v = mean(mul(p.fn(p.leaves), r)).item();
  return {v, probe.signature()};
}

double rel_error(double analytic_norm, double numeric_norm, double diff_norm) {
  return diff_norm / std::max({analytic_norm, numeric_norm, 1e-12});
}

// Returns the trial's relative error, or nullopt when the draw crossed a kink.
std::optional<double> run_trial(const Check& check, std::mt19937_64& rng) {
  auto p = check.build(rng);
  T64 r;
  {
    TapeScope<double> no_tape(nullptr);
    r = random_tensor(rng, p.fn(p.leaves).shape(), 1.0, false);
  }
  const auto base = evaluate_objective(p, r);

  GradientMap<double> grads;
  {
    Tape<double> tape;
    TapeScope<double> scope(&tape);
    const auto f = mean(mul(p.fn(p.leaves), r));
    grads = backward(tape, f);
  }
  auto grad_of = [&](const T64& leaf) -> const double* {
    const auto* g = grads.find(leaf);
    return g != nullptr ? g->data().data() : nullptr;
  };
  const double eps = kGradcheckStep;

  if (check.directional) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> dir;
    std::vector<std::vector<double>> saved;
    double norm = 0.0;
    for (auto& leaf : p.leaves) {
      dir.emplace_back(static_cast<std::size_t>(leaf.numel()));
      saved.emplace_back(leaf.data().begin(), leaf.data().end());
      for (auto& v : dir.back()) {
        v = normal(rng);
        norm += v * v;
      }
    }
    // Unit direction, so the step length in parameter space is exactly eps.
    norm = std::sqrt(norm);
    double analytic = 0.0;
    for (std::size_t l = 0; l < p.leaves.size(); ++l) {
      const double* g = grad_of(p.leaves[l]);
      for (std::size_t i = 0; i < dir[l].size(); ++i) {
        dir[l][i] /= norm;
        analytic += (g != nullptr ? g[i] : 0.0) * dir[l][i];
      }
    }
    auto shifted = [&](double sign) {
      for (std::size_t l = 0; l < p.leaves.size(); ++l) {
        auto data = p.leaves[l].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
          data[i] = saved[l][i] + sign * eps * dir[l][i];
        }
      }
      return evaluate_objective(p, r);
    };
    const auto plus = shifted(1.0);
    const auto minus = shifted(-1.0);
    if (plus.signature != base.signature || minus.signature != base.signature) {
      return std::nullopt;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * eps);
    return rel_error(std::abs(analytic), std::abs(numeric), std::abs(analytic - numeric));
  }

  double a_norm = 0.0;
  double n_norm = 0.0;
  double d_norm = 0.0;
  for (auto& leaf : p.leaves) {
    const double* g = grad_of(leaf);
    auto data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double original = data[i];
      data[i] = original + eps;
      const auto plus = evaluate_objective(p, r);
      data[i] = original - eps;
      const auto minus = evaluate_objective(p, r);
      data[i] = original;
      if (plus.signature != base.signature || minus.signature != base.signature) {
        return std::nullopt;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * eps);
      const double analytic = g != nullptr ? g[i] : 0.0;
      a_norm = std::max(a_norm, std::abs(analytic));
      n_norm = std::max(n_norm, std::abs(numeric));
      d_norm = std::max(d_norm, std::abs(analytic - numeric));
    }
  }
  return rel_error(a_norm, n_norm, d_norm);
}

constexpr int kMaxRedraws = 50;

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& c : registry()) {
    names.push_back(c.name);
  }
  return names;
}

GradcheckResult gradcheck(const std::string& name, int trials, std::uint64_t seed) {
  const auto& checks = registry();
  const auto it = std::find_if(checks.begin(), checks.end(), [&](const Check& c) { return c.name == name; });
  if (it == checks.end()) {
    throw LookupError("unknown gradcheck '" + name + "'");
  }
  if (trials < 1) {
    throw ConfigError("gradcheck trials must be >= 1");
  }
  std::uint64_t name_hash = 0;
  for (const unsigned char ch : name) {
    name_hash = mix_seed(name_hash, ch);
  }
  std::mt19937_64 rng(mix_seed(seed, name_hash));

  const auto start = std::chrono::steady_clock::now();
  GradcheckResult result;
  result.name = name;
  result.passed = true;
  for (int t = 0; t < trials; ++t) {
    std::optional<double> err;
    for (int attempt = 0; attempt <= kMaxRedraws && !err; ++attempt) {
      err = run_trial(*it, rng);
      if (!err) {
        ++result.redrawn;
      }
    }
    if (!err) {
      throw NumericError("gradcheck '" + name + "': every draw crossed a kink");
    }
    ++result.trials;
    const double e = std::isfinite(*err) ? *err : std::numeric_limits<double>::infinity();
    result.max_rel_error = std::max(result.max_rel_error, e);
  }
  result.passed = result.max_rel_error <= kGradcheckTolerance;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace attngan
