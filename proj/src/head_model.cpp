#include "anim3d/head_model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anim3d/container.hpp"
#include "anim3d/errors.hpp"
#include "anim3d/rng.hpp"

namespace anim3d {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

void requireFinite(const Eigen::MatrixXd& m, const char* name) {
  if (!m.allFinite()) throw ValidationError(std::string(name) + " contains non-finite entries");
}

}  // namespace

void HeadAsset::validate() const {
  const Eigen::Index n_v = numVertices();
  const Eigen::Index n_f = numFaces();
  if (n_v < 1 || template_vertices.cols() != 3)
    throw ValidationError("template_vertices must be n_v x 3 with n_v >= 1");
  if (!faces || n_f < 1) throw ValidationError("faces missing or empty");
  requireFinite(template_vertices, "template_vertices");
  for (Eigen::Index f = 0; f < n_f; ++f)
    for (int j = 0; j < 3; ++j) {
      const auto idx = (*faces)(f, j);
      if (idx < 0 || idx >= n_v)
        throw ValidationError("faces row " + std::to_string(f) + " references vertex " +
                              std::to_string(idx) + " outside [0, " + std::to_string(n_v) + ")");
    }
  if (shape_basis.rows() != 3 * n_v)
    throw ValidationError("shape_basis must have 3*n_v rows");
  if (expression_basis.rows() != 3 * n_v)
    throw ValidationError("expression_basis must have 3*n_v rows");
  requireFinite(shape_basis, "shape_basis");
  requireFinite(expression_basis, "expression_basis");
  if (joint_regressor.rows() != kNumJoints || joint_regressor.cols() != n_v)
    throw ValidationError("joint_regressor must be 5 x n_v");
  requireFinite(joint_regressor, "joint_regressor");
  if (skinning_weights.rows() != n_v || skinning_weights.cols() != kNumJoints)
    throw ValidationError("skinning_weights must be n_v x 5");
  requireFinite(skinning_weights, "skinning_weights");
  for (Eigen::Index i = 0; i < n_v; ++i) {
    if ((skinning_weights.row(i).array() < 0).any())
      throw ValidationError("skinning_weights row " + std::to_string(i) + " has a negative entry");
    if (std::abs(skinning_weights.row(i).sum() - 1.0) > 1e-9)
      throw ValidationError("skinning_weights row " + std::to_string(i) + " does not sum to 1");
  }
  const Eigen::Index n_l = lip_faces.size();
  if (lip_bary.rows() != n_l || (n_l > 0 && lip_bary.cols() != 3))
    throw ValidationError("lip_bary must be L x 3 matching lip_faces");
  requireFinite(lip_bary, "lip_bary");
  for (Eigen::Index l = 0; l < n_l; ++l) {
    if (lip_faces(l) < 0 || lip_faces(l) >= n_f)
      throw ValidationError("lip_faces entry " + std::to_string(l) + " outside [0, n_f)");
    if ((lip_bary.row(l).array() < 0).any())
      throw ValidationError("lip_bary row " + std::to_string(l) + " has a negative entry");
    if (std::abs(lip_bary.row(l).sum() - 1.0) > 1e-9)
      throw ValidationError("lip_bary row " + std::to_string(l) + " does not sum to 1");
  }
}

FaceParams FaceParams::zero(Eigen::Index d_beta, Eigen::Index d_psi, Eigen::Index d_alpha) {
  FaceParams p;
  p.beta = Eigen::VectorXd::Zero(d_beta);
  p.theta = Eigen::VectorXd::Zero(kPoseDim);
  p.psi = Eigen::VectorXd::Zero(d_psi);
  p.albedo = Eigen::VectorXd::Zero(d_alpha);
  p.lighting = Eigen::VectorXd::Zero(27);
  p.camera = Eigen::Vector3d(1.0, 0.0, 0.0);
  return p;
}

void FaceParams::validate() const {
  if (theta.size() != kPoseDim) throw ValidationError("theta must have 15 entries");
  const auto finite = [](const Eigen::VectorXd& v, const char* name) {
    if (!v.allFinite())
      throw ValidationError(std::string(name) + " contains non-finite entries");
  };
  finite(beta, "beta");
  finite(theta, "theta");
  finite(psi, "psi");
  finite(albedo, "albedo");
  finite(lighting, "lighting");
  finite(camera, "camera");
  for (int k = 0; k < kNumJoints; ++k)
    if (theta.segment<3>(3 * k).norm() >= M_PI)
      throw ValidationError("joint " + std::to_string(k) + " axis-angle norm must be < pi");
  if (camera(0) <= 0) throw ValidationError("camera scale must be positive");
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  const Eigen::Matrix3d k = skew(axis_angle);
  double a, b;
  if (angle < 1e-8) {
    a = 1.0 - angle * angle / 6.0;
    b = 0.5 - angle * angle / 24.0;
  } else {
    a = std::sin(angle) / angle;
    b = (1.0 - std::cos(angle)) / (angle * angle);
  }
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

Eigen::Matrix3d rodriguesDerivative(const Eigen::Vector3d& axis_angle, int i) {
  if (i < 0 || i > 2) throw ArgumentError("rodriguesDerivative: component index must be 0..2");
  Eigen::Vector3d e = Eigen::Vector3d::Zero();
  e(i) = 1.0;
  const double n2 = axis_angle.squaredNorm();
  if (n2 < 1e-16) return skew(e);
  const Eigen::Matrix3d r = rodrigues(axis_angle);
  const Eigen::Vector3d t = axis_angle.cross((Eigen::Matrix3d::Identity() - r) * e);
  return ((axis_angle(i) * skew(axis_angle) + skew(t)) / n2) * r;
}

Eigen::MatrixXd shapedVertices(const HeadAsset& asset, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& psi) {
  if (beta.size() != asset.dBeta())
    throw ArgumentError("beta has " + std::to_string(beta.size()) + " entries, asset expects " +
                        std::to_string(asset.dBeta()));
  if (psi.size() != asset.dPsi())
    throw ArgumentError("psi has " + std::to_string(psi.size()) + " entries, asset expects " +
                        std::to_string(asset.dPsi()));
  Eigen::MatrixXd shaped = asset.template_vertices;
  const Eigen::VectorXd offset = asset.shape_basis * beta + asset.expression_basis * psi;
  using RowMajor3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
  shaped += Eigen::Map<const RowMajor3>(offset.data(), asset.numVertices(), 3);
  return shaped;
}

Eigen::MatrixXd regressJoints(const HeadAsset& asset, const Eigen::MatrixXd& shaped) {
  if (shaped.rows() != asset.numVertices() || shaped.cols() != 3)
    throw ArgumentError("shaped vertices must be n_v x 3");
  return asset.joint_regressor * shaped;
}

JointTransforms poseKinematicChain(const Eigen::MatrixXd& rest_joints,
                                   const Eigen::VectorXd& theta) {
  if (rest_joints.rows() != kNumJoints || rest_joints.cols() != 3)
    throw ArgumentError("rest_joints must be 5 x 3");
  if (theta.size() != kPoseDim) throw ArgumentError("theta must have 15 entries");
  JointTransforms out;
  for (int k = 0; k < kNumJoints; ++k) {
    const Eigen::Matrix3d local = rodrigues(theta.segment<3>(3 * k));
    const int parent = kJointParent[k];
    if (parent < 0) {
      out.rotation[k] = local;
      out.position.row(k) = rest_joints.row(k);
    } else {
      out.rotation[k] = out.rotation[parent] * local;
      out.position.row(k) =
          (out.rotation[parent] * (rest_joints.row(k) - rest_joints.row(parent)).transpose())
              .transpose() +
          out.position.row(parent);
    }
  }
  return out;
}

Eigen::MatrixXd skinVertices(const HeadAsset& asset, const Eigen::MatrixXd& shaped,
                             const Eigen::MatrixXd& rest_joints, const JointTransforms& posed) {
  if (shaped.rows() != asset.numVertices() || shaped.cols() != 3)
    throw ArgumentError("shaped vertices must be n_v x 3");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(shaped.rows(), 3);
  for (int k = 0; k < kNumJoints; ++k) {
    Eigen::MatrixXd moved = (shaped.rowwise() - rest_joints.row(k)) * posed.rotation[k].transpose();
    moved.rowwise() += posed.position.row(k);
    out.array() += moved.array().colwise() * asset.skinning_weights.col(k).array();
  }
  return out;
}

Mesh evaluateMesh(const HeadAsset& asset, const Eigen::VectorXd& beta,
                  const Eigen::VectorXd& theta, const Eigen::VectorXd& psi) {
  if (theta.size() != kPoseDim)
    throw ArgumentError("theta has " + std::to_string(theta.size()) + " entries, expected 15");
  Eigen::MatrixXd shaped = shapedVertices(asset, beta, psi);
  Mesh mesh;
  mesh.faces = asset.faces;
  if (theta.isZero(0.0)) {
    mesh.vertices = std::move(shaped);
    return mesh;
  }
  const Eigen::MatrixXd joints = regressJoints(asset, shaped);
  const JointTransforms posed = poseKinematicChain(joints, theta);
  mesh.vertices = skinVertices(asset, shaped, joints, posed);
  return mesh;
}

Mesh evaluateMesh(const HeadAsset& asset, const FaceParams& params) {
  return evaluateMesh(asset, params.beta, params.theta, params.psi);
}

Eigen::MatrixXd lipLandmarks3d(const HeadAsset& asset, const Mesh& mesh) {
  if (mesh.vertices.rows() != asset.numVertices())
    throw ArgumentError("mesh vertex count does not match asset");
  const Eigen::Index n_l = asset.numLandmarks();
  Eigen::MatrixXd out(n_l, 3);
  for (Eigen::Index l = 0; l < n_l; ++l) {
    const auto f = asset.lip_faces(l);
    Eigen::RowVector3d p = Eigen::RowVector3d::Zero();
    for (int j = 0; j < 3; ++j) p += asset.lip_bary(l, j) * mesh.vertices.row((*asset.faces)(f, j));
    out.row(l) = p;
  }
  return out;
}

Eigen::MatrixXd projectWeakPerspective(const Eigen::MatrixXd& points3d,
                                       const Eigen::Vector3d& camera) {
  if (points3d.cols() != 3) throw ArgumentError("points3d must be L x 3");
  if (camera(0) <= 0) throw ArgumentError("camera scale must be positive");
  Eigen::MatrixXd out(points3d.rows(), 2);
  out.col(0) = camera(0) * (points3d.col(0).array() + camera(1));
  out.col(1) = camera(0) * (points3d.col(1).array() + camera(2));
  return out;
}

void exportObj(const Mesh& mesh, const std::filesystem::path& path) {
  std::string body;
  body.reserve(static_cast<size_t>(mesh.vertices.rows()) * 48);
  char line[128];
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    std::snprintf(line, sizeof(line), "v %.6f %.6f %.6f\n", mesh.vertices(i, 0),
                  mesh.vertices(i, 1), mesh.vertices(i, 2));
    body += line;
  }
  if (mesh.faces)
    for (Eigen::Index f = 0; f < mesh.faces->rows(); ++f) {
      std::snprintf(line, sizeof(line), "f %lld %lld %lld\n",
                    static_cast<long long>((*mesh.faces)(f, 0) + 1),
                    static_cast<long long>((*mesh.faces)(f, 1) + 1),
                    static_cast<long long>((*mesh.faces)(f, 2) + 1));
      body += line;
    }
  atomicWriteFile(path, body);
}

Mesh importObj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Eigen::RowVector3d> verts;
  std::vector<std::array<std::int64_t, 3>> faces;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Eigen::RowVector3d v;
      if (!(ss >> v(0) >> v(1) >> v(2))) throw IoError("malformed vertex line in " + path.string());
      verts.push_back(v);
    } else if (tag == "f") {
      std::array<std::int64_t, 3> f{};
      for (int j = 0; j < 3; ++j) {
        std::string tok;
        if (!(ss >> tok)) throw IoError("malformed face line in " + path.string());
        f[j] = std::stoll(tok.substr(0, tok.find('/'))) - 1;
        if (f[j] < 0) throw IoError("face index below 1 in " + path.string());
      }
      faces.push_back(f);
    }
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  auto fm = std::make_shared<FaceMatrix>(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f)
    for (int j = 0; j < 3; ++j) (*fm)(static_cast<Eigen::Index>(f), j) = faces[f][j];
  mesh.faces = std::move(fm);
  return mesh;
}

HeadAsset loadAsset(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  HeadAsset asset;
  asset.template_vertices = c.getMatrix("template_vertices");
  const Eigen::MatrixX<std::int64_t> f = c.getIntMatrix("faces");
  if (f.cols() != 3) throw SchemaError("asset faces array must be n_f x 3");
  asset.faces = std::make_shared<FaceMatrix>(f);
  asset.shape_basis = c.getMatrix("shape_basis");
  asset.expression_basis = c.getMatrix("expression_basis");
  asset.joint_regressor = c.getMatrix("joint_regressor");
  asset.skinning_weights = c.getMatrix("skinning_weights");
  asset.lip_faces = c.getIntVector("lip_faces");
  asset.lip_bary = c.getMatrix("lip_bary");
  asset.validate();
  return asset;
}

void saveAsset(const HeadAsset& asset, const std::filesystem::path& path) {
  asset.validate();
  Container c;
  c.putMatrix("template_vertices", asset.template_vertices);
  c.putIntMatrix("faces", *asset.faces);
  c.putMatrix("shape_basis", asset.shape_basis);
  c.putMatrix("expression_basis", asset.expression_basis);
  c.putMatrix("joint_regressor", asset.joint_regressor);
  c.putMatrix("skinning_weights", asset.skinning_weights);
  c.putIntVector("lip_faces", asset.lip_faces);
  c.putMatrix("lip_bary", asset.lip_bary);
  c.meta()["schema"] = "head_asset";
  c.meta()["n_v"] = asset.numVertices();
  c.meta()["n_f"] = asset.numFaces();
  c.meta()["d_beta"] = asset.dBeta();
  c.meta()["d_psi"] = asset.dPsi();
  c.save(path);
}

HeadAsset generateToyAsset(std::uint64_t seed, Eigen::Index n_v, Eigen::Index d_beta,
                           Eigen::Index d_psi) {
  if (n_v < 8) throw ArgumentError("toy asset needs n_v >= 8");
  if (d_beta < 1 || d_psi < 1) throw ArgumentError("toy asset needs basis dims >= 1");
  Rng rng(seed ^ 0x746f79ull);

  HeadAsset asset;
  const Eigen::Index jaw_count = std::max<Eigen::Index>(3, n_v / 4);
  const Eigen::Index jaw_start = n_v - jaw_count;

  // Spiral of points over an ellipsoid, jittered; the tail of the ordering
  // lands near the bottom of the head and becomes the jaw region.
  asset.template_vertices.resize(n_v, 3);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (Eigen::Index i = 0; i < n_v; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n_v);
    const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double ang = golden * static_cast<double>(i);
    Eigen::RowVector3d p(0.5 * rad * std::cos(ang), 0.6 * z, 0.55 * rad * std::sin(ang));
    p += 0.02 * rng.gaussianVector(3).transpose();
    asset.template_vertices.row(i) = p;
  }

  const Eigen::Index n_f = n_v - 2;
  auto fm = std::make_shared<FaceMatrix>(n_f, 3);
  for (Eigen::Index f = 0; f < n_f; ++f) {
    (*fm)(f, 0) = f;
    (*fm)(f, 1) = f + 1;
    (*fm)(f, 2) = f + 2;
  }
  asset.faces = std::move(fm);

  asset.shape_basis = 0.02 * rng.gaussianMatrix(3 * n_v, d_beta);
  asset.expression_basis = 0.02 * rng.gaussianMatrix(3 * n_v, d_psi);

  // Root joint regressed to the origin; the remaining joints average small
  // deterministic vertex subsets so they track shape changes.
  asset.joint_regressor = Eigen::MatrixXd::Zero(kNumJoints, n_v);
  const Eigen::Index band = std::max<Eigen::Index>(2, n_v / 8);
  const std::array<Eigen::Index, 4> anchors = {n_v / 2, jaw_start, n_v / 8, n_v / 4};
  for (int k = 1; k < kNumJoints; ++k) {
    for (Eigen::Index b = 0; b < band; ++b) {
      const Eigen::Index idx = (anchors[static_cast<size_t>(k - 1)] + b) % n_v;
      asset.joint_regressor(k, idx) += 1.0 / static_cast<double>(band);
    }
  }

  asset.skinning_weights.resize(n_v, kNumJoints);
  for (Eigen::Index i = 0; i < n_v; ++i) {
    if (i >= jaw_start) {
      asset.skinning_weights.row(i).setZero();
      asset.skinning_weights(i, kJaw) = 1.0;
    } else {
      Eigen::VectorXd w(kNumJoints);
      for (int k = 0; k < kNumJoints; ++k) w(k) = 0.05 + rng.uniform();
      w(kJaw) = 0.0;
      asset.skinning_weights.row(i) = (w / w.sum()).transpose();
    }
  }

  // 20 lip landmarks: 10 on faces fully inside the jaw region (lower lip,
  // rides the jaw joint) and 10 on jaw-free faces (upper lip).
  const Eigen::Index n_l = 20;
  asset.lip_faces.resize(n_l);
  asset.lip_bary.resize(n_l, 3);
  const Eigen::Index jaw_face_lo = jaw_start;          // faces (i, i+1, i+2), i >= jaw_start
  const Eigen::Index jaw_face_n = n_f - jaw_face_lo;   // all three vertices in the jaw region
  const Eigen::Index free_face_n = jaw_start - 2;      // all three vertices outside it
  for (Eigen::Index l = 0; l < n_l; ++l) {
    if (l < 10)
      asset.lip_faces(l) = static_cast<std::int64_t>((free_face_n > 0) ? (l % free_face_n) : 0);
    else
      asset.lip_faces(l) = static_cast<std::int64_t>(jaw_face_lo + ((l - 10) % jaw_face_n));
    Eigen::Vector3d b;
    for (int j = 0; j < 3; ++j) b(j) = 0.1 + rng.uniform();
    asset.lip_bary.row(l) = (b / b.sum()).transpose();
  }

  asset.validate();
  return asset;
}

}  // namespace anim3d
