#ifndef ATTNGAN_LOSSES_HPP_
#define ATTNGAN_LOSSES_HPP_

#include <optional>
#include <string>
#include <vector>

#include "attngan/model.hpp"
#include "json.hpp"

namespace attngan {

struct LossWeights {
  double adversarial = 1.0;
  double attention_adversarial = 1.0;
  double cycle = 10.0;
  double pixel = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Least-squares generator objective: mean((logits − 1)²).
template <typename T>
BasicTensor<T> adversarial_g(const BasicTensor<T>& logits_fake);

/// Least-squares discriminator objective: ½·[mean((real − 1)²) + mean(fake²)].
template <typename T>
BasicTensor<T> adversarial_d(const BasicTensor<T>& logits_real, const BasicTensor<T>& logits_fake);

/// Mean absolute difference between an input and its round-trip reconstruction.
template <typename T>
BasicTensor<T> cycle_loss(const BasicTensor<T>& x, const BasicTensor<T>& x_reconstructed);

/// Mean absolute difference between a translation and its paired target.
template <typename T>
BasicTensor<T> pixel_loss(const BasicTensor<T>& generated, const BasicTensor<T>& target);

struct LossTerm {
  std::string name;
  double weight = 0.0;
  std::optional<double> value;  // empty when the term was not evaluated
};

struct LossReport {
  std::vector<LossTerm> generator;
  double generator_total = 0.0;
  std::vector<LossTerm> discriminator;
  double discriminator_total = 0.0;

  /// Flat {term: value|null, ..., "g_total", "d_total"} object.
  nlohmann::json to_json() const;
};

/// Outputs of one synchronized forward pass in both directions. The cycle
/// passes may be left empty when the cycle weight is zero.
template <typename T>
struct CyclePass {
  BasicTensor<T> x;  // cloudy batch (domain X)
  BasicTensor<T> y;  // clean batch (domain Y)
  GeneratorOutput<T> xy;                        // G_xy(x)
  GeneratorOutput<T> yx;                        // G_yx(y)
  std::optional<GeneratorOutput<T>> x_cycle;    // G_yx(G_xy(x))
  std::optional<GeneratorOutput<T>> y_cycle;    // G_xy(G_yx(y))
};

/// Discriminator logits on the generated images; undefined when not computed.
template <typename T>
struct FakeLogits {
  BasicTensor<T> d_y;   // D_y(G_xy(x))
  BasicTensor<T> d_x;   // D_x(G_yx(y))
  BasicTensor<T> d_ya;  // D_ya(G_xy(x), foreground of G_xy(x))
  BasicTensor<T> d_xa;  // D_xa(G_yx(y), foreground of G_yx(y))
};

template <typename T>
struct Objective {
  BasicTensor<T> total;  // differentiable weighted sum
  std::vector<LossTerm> terms;
  double total_value = 0.0;  // Σ weight·value evaluated in double
};

/// λ_adv·(adv_xy + adv_yx) + λ_att_adv·(att_adv_xy + att_adv_yx)
///   + λ_cyc·(cyc_x + cyc_y) + λ_pix·(pix_xy + pix_yx).
/// A term contributes only when its weight is positive; a positive weight
/// with missing inputs is a ContractError.
template <typename T>
Objective<T> total_generator_loss(const CyclePass<T>& pass, const FakeLogits<T>& logits, const LossWeights& weights);

template <typename T>
struct DiscriminatorLogits {
  BasicTensor<T> real;
  BasicTensor<T> fake;
};

/// λ_adv·(d_x + d_y) + λ_att_adv·(d_xa + d_ya) over the four discriminators.
template <typename T>
Objective<T> total_discriminator_loss(const DiscriminatorLogits<T>& d_x, const DiscriminatorLogits<T>& d_y,
                                      const DiscriminatorLogits<T>& d_xa, const DiscriminatorLogits<T>& d_ya,
                                      const LossWeights& weights);

}  // namespace attngan

#endif  // ATTNGAN_LOSSES_HPP_
