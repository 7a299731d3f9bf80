#include "anim3d/lip_projection.hpp"

#include <algorithm>
#include <utility>

#include "anim3d/errors.hpp"

namespace anim3d {

namespace {

FaceParams withPrediction(const FaceParams& frame, const Eigen::VectorXd& psi,
                          const Eigen::Vector3d& jaw) {
  FaceParams p = frame;
  p.psi = psi;
  p.setJaw(jaw);
  p.validate();
  return p;
}

}  // namespace

std::vector<Eigen::Index> lipVertexIds(const HeadAsset& asset) {
  std::vector<Eigen::Index> ids;
  ids.reserve(static_cast<size_t>(asset.numLandmarks()) * 3);
  for (Eigen::Index l = 0; l < asset.numLandmarks(); ++l)
    for (int j = 0; j < 3; ++j) ids.push_back((*asset.faces)(asset.lip_faces(l), j));
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

Eigen::MatrixXd projectedLips(const HeadAsset& asset, const FaceParams& frame,
                              const Eigen::VectorXd& psi, const Eigen::Vector3d& jaw) {
  const FaceParams p = withPrediction(frame, psi, jaw);
  const Mesh mesh = evaluateMesh(asset, p);
  return projectWeakPerspective(lipLandmarks3d(asset, mesh), p.camera);
}

LipJacobian projectedLipsJacobian(const HeadAsset& asset, const FaceParams& frame,
                                  const Eigen::VectorXd& psi, const Eigen::Vector3d& jaw) {
  const FaceParams p = withPrediction(frame, psi, jaw);
  const Eigen::Index n_v = asset.numVertices();
  const Eigen::Index n_l = asset.numLandmarks();
  const Eigen::Index d_psi = asset.dPsi();
  const double scale = p.camera(0);

  LipJacobian out;
  out.landmarks2d = projectedLips(asset, frame, psi, jaw);
  out.d_psi.resize(2 * n_l, d_psi);
  out.d_jaw.resize(2 * n_l, 3);

  const Eigen::MatrixXd shaped = shapedVertices(asset, p.beta, p.psi);
  const Eigen::MatrixXd joints = regressJoints(asset, shaped);
  const JointTransforms posed = poseKinematicChain(joints, p.theta);
  const std::vector<Eigen::Index> verts = lipVertexIds(asset);

  // Derivative of each needed skinned vertex, one psi direction at a time.
  // The rotations are pose-only, so only the shaped vertices and the joint
  // positions move: d v'_i = sum_k w_ik (R_k (d v_i - d j_k) + d pos_k).
  using RowMajor3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
  Eigen::MatrixXd dvert(3, static_cast<Eigen::Index>(verts.size()));
  for (Eigen::Index m = 0; m < d_psi; ++m) {
    const Eigen::Map<const RowMajor3> dshaped(asset.expression_basis.col(m).data(), n_v, 3);
    const Eigen::MatrixXd djoints = asset.joint_regressor * dshaped;
    Eigen::Matrix<double, kNumJoints, 3> dpos;
    for (int k = 0; k < kNumJoints; ++k) {
      const int parent = kJointParent[k];
      if (parent < 0)
        dpos.row(k) = djoints.row(k);
      else
        dpos.row(k) = (posed.rotation[parent] *
                       (djoints.row(k) - djoints.row(parent)).transpose())
                          .transpose() +
                      dpos.row(parent);
    }
    for (size_t vi = 0; vi < verts.size(); ++vi) {
      const Eigen::Index i = verts[vi];
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (int k = 0; k < kNumJoints; ++k) {
        const double w = asset.skinning_weights(i, k);
        if (w == 0.0) continue;
        acc += w * (posed.rotation[k] * (dshaped.row(i) - djoints.row(k)).transpose() +
                    dpos.row(k).transpose());
      }
      dvert.col(static_cast<Eigen::Index>(vi)) = acc;
    }
    for (Eigen::Index l = 0; l < n_l; ++l) {
      Eigen::Vector3d dlm = Eigen::Vector3d::Zero();
      for (int j = 0; j < 3; ++j) {
        const Eigen::Index v = (*asset.faces)(asset.lip_faces(l), j);
        const auto it = std::lower_bound(verts.begin(), verts.end(), v);
        dlm += asset.lip_bary(l, j) * dvert.col(it - verts.begin());
      }
      out.d_psi(2 * l, m) = scale * dlm.x();
      out.d_psi(2 * l + 1, m) = scale * dlm.y();
    }
  }

  // The jaw joint has no children, so its rotation reaches the mesh only
  // through its own skinning term: d v'_i = w_i,jaw R_neck dR_jaw (v_i - j_jaw).
  for (int a = 0; a < 3; ++a) {
    const Eigen::Matrix3d dr = posed.rotation[kNeck] * rodriguesDerivative(p.jaw(), a);
    for (Eigen::Index l = 0; l < n_l; ++l) {
      Eigen::Vector3d dlm = Eigen::Vector3d::Zero();
      for (int j = 0; j < 3; ++j) {
        const Eigen::Index i = (*asset.faces)(asset.lip_faces(l), j);
        const double w = asset.skinning_weights(i, kJaw);
        if (w == 0.0) continue;
        dlm += asset.lip_bary(l, j) * w *
               (dr * (shaped.row(i) - joints.row(kJaw)).transpose());
      }
      out.d_jaw(2 * l, a) = scale * dlm.x();
      out.d_jaw(2 * l + 1, a) = scale * dlm.y();
    }
  }
  return out;
}

ad::Tensor projectedLipsGraph(const HeadAsset& asset, const std::vector<FaceParams>& base_frames,
                              const ad::Tensor& psi_seq, const ad::Tensor& jaw_seq) {
  const auto t_count = static_cast<Eigen::Index>(base_frames.size());
  if (t_count == 0) throw ArgumentError("projectedLipsGraph: no frames");
  if (psi_seq->shape.size() != 2 || psi_seq->rows() != t_count ||
      psi_seq->cols() != asset.dPsi())
    throw ArgumentError("projectedLipsGraph: psi_seq must be [" + std::to_string(t_count) + "," +
                        std::to_string(asset.dPsi()) + "], got " + ad::shapeStr(psi_seq->shape));
  if (jaw_seq->shape.size() != 2 || jaw_seq->rows() != t_count || jaw_seq->cols() != 3)
    throw ArgumentError("projectedLipsGraph: jaw_seq must be [" + std::to_string(t_count) +
                        ",3], got " + ad::shapeStr(jaw_seq->shape));

  const Eigen::Index n_l = asset.numLandmarks();
  const Eigen::Index d_psi = asset.dPsi();
  Eigen::VectorXd value(t_count * 2 * n_l);
  std::vector<Eigen::MatrixXd> j_psi(static_cast<size_t>(t_count));
  std::vector<Eigen::MatrixXd> j_jaw(static_cast<size_t>(t_count));
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const Eigen::VectorXd psi = psi_seq->value.segment(t * d_psi, d_psi);
    const Eigen::Vector3d jaw = jaw_seq->value.segment(t * 3, 3);
    LipJacobian jac = projectedLipsJacobian(asset, base_frames[static_cast<size_t>(t)], psi, jaw);
    for (Eigen::Index l = 0; l < n_l; ++l) {
      value(t * 2 * n_l + 2 * l) = jac.landmarks2d(l, 0);
      value(t * 2 * n_l + 2 * l + 1) = jac.landmarks2d(l, 1);
    }
    j_psi[static_cast<size_t>(t)] = std::move(jac.d_psi);
    j_jaw[static_cast<size_t>(t)] = std::move(jac.d_jaw);
  }

  auto vjp = [j_psi = std::move(j_psi), j_jaw = std::move(j_jaw), n_l, d_psi](ad::Node& self) {
    const auto frames = static_cast<Eigen::Index>(j_psi.size());
    for (Eigen::Index t = 0; t < frames; ++t) {
      const auto g = self.grad.segment(t * 2 * n_l, 2 * n_l);
      self.inputs[0]->grad.segment(t * d_psi, d_psi).noalias() +=
          j_psi[static_cast<size_t>(t)].transpose() * g;
      self.inputs[1]->grad.segment(t * 3, 3).noalias() +=
          j_jaw[static_cast<size_t>(t)].transpose() * g;
    }
  };
  return ad::customOp({t_count, 2 * n_l}, std::move(value), {psi_seq, jaw_seq}, std::move(vjp),
                      "projectedLips");
}

}  // namespace anim3d
