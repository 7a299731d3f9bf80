#pragma once

#include <Eigen/Dense>
#include <vector>

#include "anim3d/head_model.hpp"
#include "anim3d/tensor.hpp"

namespace anim3d {

/// Projected 2-D lip landmarks of one frame together with their exact
/// Jacobians. Jacobian rows follow the flattened landmark order
/// (x0, y0, x1, y1, ...).
struct LipJacobian {
  Eigen::MatrixXd landmarks2d;  // L x 2
  Eigen::MatrixXd d_psi;        // 2L x d_psi
  Eigen::MatrixXd d_jaw;        // 2L x 3
};

/// Vertex indices referenced by the lip landmark faces, sorted and
/// deduplicated. This is the lip subset used by the lip metrics.
std::vector<Eigen::Index> lipVertexIds(const HeadAsset& asset);

/// 2-D lip landmarks of `frame` with its expression and jaw pose replaced by
/// the given values. Plain evaluation, no tape.
Eigen::MatrixXd projectedLips(const HeadAsset& asset, const FaceParams& frame,
                              const Eigen::VectorXd& psi, const Eigen::Vector3d& jaw);

/// As projectedLips, plus analytic derivatives of the flattened landmarks
/// with respect to psi and the jaw axis-angle. The expression enters the
/// skinned vertices both directly and through the regressed joints; the jaw
/// enters only through its own world rotation (it has no child joints).
LipJacobian projectedLipsJacobian(const HeadAsset& asset, const FaceParams& frame,
                                  const Eigen::VectorXd& psi, const Eigen::Vector3d& jaw);

/// Tape node mapping predicted sequences to flattened 2-D lip landmarks:
/// psi_seq [T, d_psi] and jaw_seq [T, 3] -> [T, 2L]. Frame t takes beta,
/// theta, and camera from base_frames[t], with the jaw segment of theta
/// overridden by jaw_seq row t. Backward applies the analytic Jacobians.
ad::Tensor projectedLipsGraph(const HeadAsset& asset, const std::vector<FaceParams>& base_frames,
                              const ad::Tensor& psi_seq, const ad::Tensor& jaw_seq);

}  // namespace anim3d
