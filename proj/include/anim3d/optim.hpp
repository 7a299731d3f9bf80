#pragma once

#include <vector>

#include "anim3d/tensor.hpp"

namespace anim3d::ad {

// Adam with bias correction. Moment vectors are allocated on first use and
// keyed by position in the parameter list, so the same state object must be
// fed the same parameter list (same order, same sizes) on every step.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Eigen::VectorXd> m;
  std::vector<Eigen::VectorXd> v;
};

// Applies one update in place using each parameter's current grad.
// Parameters whose grad was never filled by backward() are rejected.
void adamStep(AdamState& state, const std::vector<Tensor>& params);

}  // namespace anim3d::ad
