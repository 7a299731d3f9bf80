#include "anim3d/optim.hpp"

#include <cmath>
#include <string>

#include "anim3d/errors.hpp"

namespace anim3d::ad {

void adamStep(AdamState& state, const std::vector<Tensor>& params) {
  if (params.empty()) throw ArgumentError("adamStep: empty parameter list");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i] = Eigen::VectorXd::Zero(params[i]->numel());
      state.v[i] = Eigen::VectorXd::Zero(params[i]->numel());
    }
  }
  if (state.m.size() != params.size())
    throw ArgumentError("adamStep: state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (size_t i = 0; i < params.size(); ++i) {
    Node& p = *params[i];
    if (!p.requires_grad)
      throw ArgumentError("adamStep: parameter " + std::to_string(i) + " is not trainable");
    if (p.grad.size() != p.numel())
      throw ArgumentError("adamStep: parameter " + std::to_string(i) +
                          " has no gradient; run backward() first");
    if (state.m[i].size() != p.numel())
      throw ArgumentError("adamStep: parameter " + std::to_string(i) + " has " +
                          std::to_string(p.numel()) + " values but state tracks " +
                          std::to_string(state.m[i].size()));

    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad;
    state.v[i].array() =
        state.beta2 * state.v[i].array() + (1.0 - state.beta2) * p.grad.array().square();
    const Eigen::ArrayXd m_hat = state.m[i].array() / bc1;
    const Eigen::ArrayXd v_hat = state.v[i].array() / bc2;
    p.value.array() -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    if (!p.value.allFinite())
      throw InternalError("adamStep: parameter " + std::to_string(i) + " became non-finite");
  }
}

}  // namespace anim3d::ad
