#include <set>

#include "attngan/error.hpp"
#include "attngan/gradcheck.hpp"
#include "doctest.h"

using namespace attngan;

TEST_CASE("every op and network passes the finite-difference check") {
  const auto names = gradcheck_names();
  const std::set<std::string> registered(names.begin(), names.end());
  for (const char* required : {"conv2d", "conv_transpose2d", "instance_norm", "softmax_over_channel", "attention_fuse",
                               "generator", "discriminator", "attended_discriminator"}) {
    CHECK(registered.count(required) == 1);
  }
  for (const auto& name : names) {
    const auto r = gradcheck(name, kGradcheckTrials, 42);
    CAPTURE(name);
    CAPTURE(r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.trials == kGradcheckTrials);
    CHECK(r.max_rel_error <= kGradcheckTolerance);
  }
}

TEST_CASE("smooth op error sits orders of magnitude under the tolerance") {
  const auto r = gradcheck("tanh", 5, 1);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("unknown check name") {
  CHECK_THROWS_AS(gradcheck("convolution3d"), LookupError);
}
