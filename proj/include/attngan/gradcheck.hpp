#ifndef ATTNGAN_GRADCHECK_HPP_
#define ATTNGAN_GRADCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace attngan {

// Finite-difference verification of the reverse-mode gradients, in double
// precision. Each trial draws fresh inputs and parameters and differentiates
// f = mean(out ⊙ R) for a random R. Small ops compare every partial
// derivative by central differences; networks compare the directional
// derivative along a random direction. A trial whose perturbed evaluations
// take a different branch at some relu/leaky_relu/abs kink is redrawn.

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr int kGradcheckTrials = 100;

struct GradcheckResult {
  std::string name;
  int trials = 0;
  int redrawn = 0;  // draws discarded for crossing a kink
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed = false;
};

/// Registered check names: every differentiable op, the losses, and the
/// residual block, generator and discriminators.
std::vector<std::string> gradcheck_names();

/// Throws LookupError for an unknown name.
GradcheckResult gradcheck(const std::string& name, int trials = kGradcheckTrials, std::uint64_t seed = 42);

}  // namespace attngan

#endif  // ATTNGAN_GRADCHECK_HPP_
