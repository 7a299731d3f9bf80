#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>

namespace anim3d {

/// Joints of the head rig, in kinematic-chain order.
enum Joint : int { kGlobal = 0, kNeck = 1, kJaw = 2, kEyeLeft = 3, kEyeRight = 4 };
inline constexpr int kNumJoints = 5;
inline constexpr std::array<int, kNumJoints> kJointParent = {-1, kGlobal, kNeck, kNeck, kNeck};
inline constexpr int kPoseDim = 3 * kNumJoints;  // axis-angle per joint

using FaceMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 3>;

/// Static model data: template geometry, linear shape/expression bases,
/// a joint regressor, skinning weights, and the lip-landmark embedding.
///
/// Basis matrices are stored flattened per vertex: row 3*i + c is coordinate
/// c of vertex i, one column per basis direction.
struct HeadAsset {
  Eigen::MatrixXd template_vertices;            // n_v x 3
  std::shared_ptr<const FaceMatrix> faces;      // n_f x 3, shared with meshes
  Eigen::MatrixXd shape_basis;                  // (3 n_v) x d_beta
  Eigen::MatrixXd expression_basis;             // (3 n_v) x d_psi
  Eigen::MatrixXd joint_regressor;              // kNumJoints x n_v
  Eigen::MatrixXd skinning_weights;             // n_v x kNumJoints
  Eigen::VectorX<std::int64_t> lip_faces;       // L face indices
  Eigen::MatrixXd lip_bary;                     // L x 3 barycentric weights

  Eigen::Index numVertices() const { return template_vertices.rows(); }
  Eigen::Index numFaces() const { return faces ? faces->rows() : 0; }
  Eigen::Index dBeta() const { return shape_basis.cols(); }
  Eigen::Index dPsi() const { return expression_basis.cols(); }
  Eigen::Index numLandmarks() const { return lip_faces.size(); }

  /// Throws ValidationError on the first violated invariant.
  void validate() const;
};

/// Per-frame parameter tuple: identity shape, pose, expression, and the
/// pass-through albedo / lighting / weak-perspective camera channels.
struct FaceParams {
  Eigen::VectorXd beta;      // d_beta
  Eigen::VectorXd theta;     // kPoseDim, axis-angle radians per joint
  Eigen::VectorXd psi;       // d_psi
  Eigen::VectorXd albedo;    // d_alpha (pass-through)
  Eigen::VectorXd lighting;  // 27 SH coefficients (pass-through)
  Eigen::Vector3d camera;    // scale, tx, ty

  static FaceParams zero(Eigen::Index d_beta, Eigen::Index d_psi, Eigen::Index d_alpha = 50);
  Eigen::Vector3d jaw() const { return theta.segment<3>(3 * kJaw); }
  void setJaw(const Eigen::Vector3d& v) { theta.segment<3>(3 * kJaw) = v; }
  void validate() const;
};

struct Mesh {
  Eigen::MatrixXd vertices;                 // n_v x 3
  std::shared_ptr<const FaceMatrix> faces;  // shared with the asset
};

/// Axis-angle to rotation matrix. Exact identity at zero.
Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle);

/// Partial derivative of rodrigues(w) with respect to w[i].
Eigen::Matrix3d rodriguesDerivative(const Eigen::Vector3d& axis_angle, int i);

/// Rigid transforms of the posed kinematic chain.
struct JointTransforms {
  std::array<Eigen::Matrix3d, kNumJoints> rotation;  // world rotation per joint
  Eigen::Matrix<double, kNumJoints, 3> position;     // posed joint position
};

/// Template + shape_basis*beta + expression_basis*psi.
Eigen::MatrixXd shapedVertices(const HeadAsset& asset, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& psi);

/// Joint locations regressed from shaped (pre-pose) vertices; kNumJoints x 3.
Eigen::MatrixXd regressJoints(const HeadAsset& asset, const Eigen::MatrixXd& shaped);

/// Composes per-joint axis-angle rotations along the chain
/// global -> neck -> {jaw, eyes}.
JointTransforms poseKinematicChain(const Eigen::MatrixXd& rest_joints,
                                   const Eigen::VectorXd& theta);

/// Linear blend skinning of shaped vertices under posed joint transforms.
Eigen::MatrixXd skinVertices(const HeadAsset& asset, const Eigen::MatrixXd& shaped,
                             const Eigen::MatrixXd& rest_joints,
                             const JointTransforms& posed);

/// Full mesh evaluation. A zero pose short-circuits skinning, so
/// evaluateMesh(asset, 0, 0, 0) reproduces the template bit-exactly.
Mesh evaluateMesh(const HeadAsset& asset, const Eigen::VectorXd& beta,
                  const Eigen::VectorXd& theta, const Eigen::VectorXd& psi);
Mesh evaluateMesh(const HeadAsset& asset, const FaceParams& params);

/// Barycentric lip landmarks of a posed mesh; L x 3.
Eigen::MatrixXd lipLandmarks3d(const HeadAsset& asset, const Mesh& mesh);

/// Weak-perspective projection (x, y) = scale * (X + tx, Y + ty); L x 2.
Eigen::MatrixXd projectWeakPerspective(const Eigen::MatrixXd& points3d,
                                       const Eigen::Vector3d& camera);

/// Wavefront OBJ with fixed 6-decimal vertex lines and 1-indexed faces.
void exportObj(const Mesh& mesh, const std::filesystem::path& path);
Mesh importObj(const std::filesystem::path& path);

HeadAsset loadAsset(const std::filesystem::path& path);
void saveAsset(const HeadAsset& asset, const std::filesystem::path& path);

/// Deterministic procedurally-built asset for tests and synthetic data.
/// The last max(3, n_v/4) vertices form a jaw region with skinning weight 1
/// on the jaw joint; the root joint is regressed to the origin.
HeadAsset generateToyAsset(std::uint64_t seed, Eigen::Index n_v = 32,
                           Eigen::Index d_beta = 8, Eigen::Index d_psi = 10);

}  // namespace anim3d
