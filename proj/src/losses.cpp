#include "attngan/losses.hpp"

#include <cmath>

namespace attngan {

void LossWeights::validate() const {
  for (double w : {adversarial, attention_adversarial, cycle, pixel}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"adversarial", w.adversarial},
                     {"attention_adversarial", w.attention_adversarial},
                     {"cycle", w.cycle},
                     {"pixel", w.pixel}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  j.at("adversarial").get_to(w.adversarial);
  j.at("attention_adversarial").get_to(w.attention_adversarial);
  j.at("cycle").get_to(w.cycle);
  j.at("pixel").get_to(w.pixel);
}

namespace {

template <typename T>
BasicTensor<T> l1(const char* name, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return mean(abs(sub(a, b)));
}

template <typename T>
class Accumulator {
 public:
  void add(const std::string& name, double weight, const BasicTensor<T>& term) {
    LossTerm entry{name, weight, std::nullopt};
    if (term.defined()) {
      entry.value = static_cast<double>(term.item());
      if (weight > 0.0) {
        auto scaled = mul_scalar(term, static_cast<T>(weight));
        total_ = total_.defined() ? attngan::add(total_, scaled) : scaled;
        value_ += weight * *entry.value;
      }
    }
    terms_.push_back(std::move(entry));
  }

  Objective<T> finish() {
    Objective<T> out;
    out.total = total_.defined() ? total_ : BasicTensor<T>::scalar(T(0));
    out.terms = std::move(terms_);
    out.total_value = value_;
    return out;
  }

 private:
  BasicTensor<T> total_;
  std::vector<LossTerm> terms_;
  double value_ = 0.0;
};

void require_inputs(bool present, double weight, const char* term) {
  if (weight > 0.0 && !present) {
    throw ContractError(std::string("loss term ") + term + " has positive weight but no inputs");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> adversarial_g(const BasicTensor<T>& logits_fake) {
  return mean(square(add_scalar(logits_fake, T(-1))));
}

template <typename T>
BasicTensor<T> adversarial_d(const BasicTensor<T>& logits_real, const BasicTensor<T>& logits_fake) {
  auto real_term = mean(square(add_scalar(logits_real, T(-1))));
  auto fake_term = mean(square(logits_fake));
  return mul_scalar(add(real_term, fake_term), T(0.5));
}

template <typename T>
BasicTensor<T> cycle_loss(const BasicTensor<T>& x, const BasicTensor<T>& x_reconstructed) {
  return l1("cycle_loss", x, x_reconstructed);
}

template <typename T>
BasicTensor<T> pixel_loss(const BasicTensor<T>& generated, const BasicTensor<T>& target) {
  return l1("pixel_loss", generated, target);
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& side : {&generator, &discriminator}) {
    for (const auto& t : *side) {
      j[t.name] = t.value ? nlohmann::json(*t.value) : nlohmann::json(nullptr);
    }
  }
  j["g_total"] = generator_total;
  j["d_total"] = discriminator_total;
  return j;
}

template <typename T>
Objective<T> total_generator_loss(const CyclePass<T>& pass, const FakeLogits<T>& logits, const LossWeights& weights) {
  weights.validate();
  Accumulator<T> acc;
  auto optional_term = [](bool present, auto&& make) { return present ? make() : BasicTensor<T>(); };

  require_inputs(logits.d_y.defined(), weights.adversarial, "adv_xy");
  require_inputs(logits.d_x.defined(), weights.adversarial, "adv_yx");
  acc.add("adv_xy", weights.adversarial,
          optional_term(logits.d_y.defined(), [&] { return adversarial_g(logits.d_y); }));
  acc.add("adv_yx", weights.adversarial,
          optional_term(logits.d_x.defined(), [&] { return adversarial_g(logits.d_x); }));

  require_inputs(logits.d_ya.defined(), weights.attention_adversarial, "att_adv_xy");
  require_inputs(logits.d_xa.defined(), weights.attention_adversarial, "att_adv_yx");
  acc.add("att_adv_xy", weights.attention_adversarial,
          optional_term(logits.d_ya.defined(), [&] { return adversarial_g(logits.d_ya); }));
  acc.add("att_adv_yx", weights.attention_adversarial,
          optional_term(logits.d_xa.defined(), [&] { return adversarial_g(logits.d_xa); }));

  require_inputs(pass.x_cycle.has_value(), weights.cycle, "cyc_x");
  require_inputs(pass.y_cycle.has_value(), weights.cycle, "cyc_y");
  acc.add("cyc_x", weights.cycle,
          optional_term(pass.x_cycle.has_value(), [&] { return cycle_loss(pass.x, pass.x_cycle->fused); }));
  acc.add("cyc_y", weights.cycle,
          optional_term(pass.y_cycle.has_value(), [&] { return cycle_loss(pass.y, pass.y_cycle->fused); }));

  const bool have_xy = pass.xy.fused.defined() && pass.y.defined();
  const bool have_yx = pass.yx.fused.defined() && pass.x.defined();
  require_inputs(have_xy, weights.pixel, "pix_xy");
  require_inputs(have_yx, weights.pixel, "pix_yx");
  acc.add("pix_xy", weights.pixel, optional_term(have_xy, [&] { return pixel_loss(pass.xy.fused, pass.y); }));
  acc.add("pix_yx", weights.pixel, optional_term(have_yx, [&] { return pixel_loss(pass.yx.fused, pass.x); }));
  return acc.finish();
}

template <typename T>
Objective<T> total_discriminator_loss(const DiscriminatorLogits<T>& d_x, const DiscriminatorLogits<T>& d_y,
                                      const DiscriminatorLogits<T>& d_xa, const DiscriminatorLogits<T>& d_ya,
                                      const LossWeights& weights) {
  weights.validate();
  Accumulator<T> acc;
  auto term = [](const DiscriminatorLogits<T>& l) {
    return l.real.defined() && l.fake.defined() ? adversarial_d(l.real, l.fake) : BasicTensor<T>();
  };
  auto present = [](const DiscriminatorLogits<T>& l) { return l.real.defined() && l.fake.defined(); };
  require_inputs(present(d_x), weights.adversarial, "d_x");
  require_inputs(present(d_y), weights.adversarial, "d_y");
  require_inputs(present(d_xa), weights.attention_adversarial, "d_xa");
  require_inputs(present(d_ya), weights.attention_adversarial, "d_ya");
  acc.add("d_x", weights.adversarial, term(d_x));
  acc.add("d_y", weights.adversarial, term(d_y));
  acc.add("d_xa", weights.attention_adversarial, term(d_xa));
  acc.add("d_ya", weights.attention_adversarial, term(d_ya));
  return acc.finish();
}

#define ATTNGAN_INSTANTIATE_LOSSES(T)                                                                       \
  template BasicTensor<T> adversarial_g(const BasicTensor<T>&);                                             \
  template BasicTensor<T> adversarial_d(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> cycle_loss(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> pixel_loss(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template Objective<T> total_generator_loss(const CyclePass<T>&, const FakeLogits<T>&, const LossWeights&); \
  template Objective<T> total_discriminator_loss(const DiscriminatorLogits<T>&, const DiscriminatorLogits<T>&, \
                                                 const DiscriminatorLogits<T>&, const DiscriminatorLogits<T>&, \
                                                 const LossWeights&);

ATTNGAN_INSTANTIATE_LOSSES(float)
ATTNGAN_INSTANTIATE_LOSSES(double)

#undef ATTNGAN_INSTANTIATE_LOSSES

}  // namespace attngan
