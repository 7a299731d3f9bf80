#include "anim3d/head_model.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "anim3d/errors.hpp"
#include "anim3d/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace anim3d;
using testutil::TempDir;

TEST_CASE("toy asset is valid, deterministic, and seed-sensitive") {
  const HeadAsset a = generateToyAsset(0);
  CHECK(a.numVertices() == 32);
  for (Eigen::Index i = 0; i < a.numVertices(); ++i)
    CHECK(a.skinning_weights.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

  const HeadAsset b = generateToyAsset(0);
  CHECK(a.template_vertices == b.template_vertices);
  CHECK(a.shape_basis == b.shape_basis);
  CHECK(a.skinning_weights == b.skinning_weights);

  const HeadAsset c = generateToyAsset(1);
  CHECK(a.template_vertices != c.template_vertices);

  CHECK_THROWS_AS(generateToyAsset(0, 4), ArgumentError);
  CHECK_THROWS_AS(generateToyAsset(0, 32, 0), ArgumentError);
}

TEST_CASE("asset save/load round-trips bit-exactly") {
  TempDir dir;
  const auto path = dir.path / "toy.anim3d";
  const HeadAsset a = generateToyAsset(3, 24, 4, 6);
  saveAsset(a, path);
  const HeadAsset r = loadAsset(path);
  CHECK(r.template_vertices == a.template_vertices);
  CHECK(*r.faces == *a.faces);
  CHECK(r.shape_basis == a.shape_basis);
  CHECK(r.expression_basis == a.expression_basis);
  CHECK(r.joint_regressor == a.joint_regressor);
  CHECK(r.skinning_weights == a.skinning_weights);
  CHECK(r.lip_faces == a.lip_faces);
  CHECK(r.lip_bary == a.lip_bary);
}

TEST_CASE("asset validation names the violated field") {
  HeadAsset a = generateToyAsset(0);
  SUBCASE("negative skinning weight") {
    a.skinning_weights(2, 0) = -0.1;
    CHECK_THROWS_WITH_AS(a.validate(), doctest::Contains("skinning_weights"), ValidationError);
  }
  SUBCASE("face index out of range") {
    (*std::const_pointer_cast<FaceMatrix>(a.faces))(0, 1) = 99;
    CHECK_THROWS_WITH_AS(a.validate(), doctest::Contains("faces"), ValidationError);
  }
  SUBCASE("non-finite basis entry") {
    a.expression_basis(5, 0) = std::nan("");
    CHECK_THROWS_WITH_AS(a.validate(), doctest::Contains("expression_basis"), ValidationError);
  }
  SUBCASE("barycentric weights off") {
    a.lip_bary(4, 0) += 0.5;
    CHECK_THROWS_WITH_AS(a.validate(), doctest::Contains("lip_bary"), ValidationError);
  }
}

TEST_CASE("zero parameters reproduce the template bit-exactly") {
  const HeadAsset a = generateToyAsset(0);
  const Mesh m = evaluateMesh(a, Eigen::VectorXd::Zero(a.dBeta()),
                              Eigen::VectorXd::Zero(kPoseDim), Eigen::VectorXd::Zero(a.dPsi()));
  CHECK(m.vertices == a.template_vertices);
}

TEST_CASE("blendshapes are linear at zero pose") {
  const HeadAsset a = generateToyAsset(1);
  Rng rng(7);
  const Eigen::VectorXd beta = rng.gaussianVector(a.dBeta());
  const Eigen::VectorXd zero_theta = Eigen::VectorXd::Zero(kPoseDim);
  const Eigen::VectorXd zero_psi = Eigen::VectorXd::Zero(a.dPsi());

  const Eigen::MatrixXd d1 =
      evaluateMesh(a, beta, zero_theta, zero_psi).vertices - a.template_vertices;
  const Eigen::MatrixXd d2 =
      evaluateMesh(a, (2.0 * beta).eval(), zero_theta, zero_psi).vertices - a.template_vertices;
  CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() < 1e-14);

  const Eigen::VectorXd beta2 = rng.gaussianVector(a.dBeta());
  const Eigen::VectorXd psi1 = rng.gaussianVector(a.dPsi());
  const Eigen::VectorXd psi2 = rng.gaussianVector(a.dPsi());
  const double s = 0.3, t = -1.7;
  const Eigen::MatrixXd lhs =
      evaluateMesh(a, (s * beta + t * beta2).eval(), zero_theta, (s * psi1 + t * psi2).eval())
          .vertices -
      a.template_vertices;
  const Eigen::MatrixXd rhs =
      s * (evaluateMesh(a, beta, zero_theta, psi1).vertices - a.template_vertices) +
      t * (evaluateMesh(a, beta2, zero_theta, psi2).vertices - a.template_vertices);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("jaw-only pose rotates the jaw region about the regressed joint") {
  const HeadAsset a = generateToyAsset(0);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(kPoseDim);
  theta.segment<3>(3 * kJaw) = Eigen::Vector3d(0.3, 0.0, 0.0);

  const Mesh m = evaluateMesh(a, Eigen::VectorXd::Zero(a.dBeta()), theta,
                              Eigen::VectorXd::Zero(a.dPsi()));
  const Eigen::MatrixXd joints = regressJoints(a, a.template_vertices);
  const Eigen::Vector3d jaw_joint = joints.row(kJaw).transpose();
  const Eigen::Matrix3d r = rodrigues(Eigen::Vector3d(0.3, 0.0, 0.0));

  const Eigen::Index jaw_start = a.numVertices() - std::max<Eigen::Index>(3, a.numVertices() / 4);
  for (Eigen::Index i = jaw_start; i < a.numVertices(); ++i) {
    REQUIRE(a.skinning_weights(i, kJaw) == 1.0);
    const Eigen::Vector3d expect =
        r * (a.template_vertices.row(i).transpose() - jaw_joint) + jaw_joint;
    CHECK((m.vertices.row(i).transpose() - expect).norm() < 1e-10);
  }
}

TEST_CASE("global rotation alone rigidly rotates the shaped vertices") {
  const HeadAsset a = generateToyAsset(2);
  Rng rng(11);
  const Eigen::VectorXd beta = 0.5 * rng.gaussianVector(a.dBeta());
  const Eigen::VectorXd psi = 0.5 * rng.gaussianVector(a.dPsi());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(kPoseDim);
  theta.segment<3>(0) = Eigen::Vector3d(0.4, -0.2, 0.7);

  const Mesh m = evaluateMesh(a, beta, theta, psi);
  const Eigen::MatrixXd shaped = shapedVertices(a, beta, psi);
  const Eigen::Matrix3d r = rodrigues(theta.segment<3>(0));
  const Eigen::MatrixXd expect = shaped * r.transpose();
  CHECK((m.vertices - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("skinning with all weight on one joint is that joint's rigid motion") {
  HeadAsset a = generateToyAsset(4);
  a.skinning_weights.setZero();
  a.skinning_weights.col(kNeck).setOnes();

  Rng rng(5);
  Eigen::VectorXd theta(kPoseDim);
  for (int i = 0; i < kPoseDim; ++i) theta(i) = rng.uniform(-0.5, 0.5);

  const Eigen::MatrixXd joints = regressJoints(a, a.template_vertices);
  const JointTransforms posed = poseKinematicChain(joints, theta);
  const Eigen::MatrixXd skinned = skinVertices(a, a.template_vertices, joints, posed);
  for (Eigen::Index i = 0; i < a.numVertices(); ++i) {
    const Eigen::Vector3d expect =
        posed.rotation[kNeck] *
            (a.template_vertices.row(i).transpose() - joints.row(kNeck).transpose()) +
        posed.position.row(kNeck).transpose();
    CHECK((skinned.row(i).transpose() - expect).norm() < 1e-12);
  }
}

TEST_CASE("rodrigues basics and derivative match finite differences") {
  CHECK(rodrigues(Eigen::Vector3d::Zero()) == Eigen::Matrix3d::Identity());

  const Eigen::Matrix3d r90 = rodrigues(Eigen::Vector3d(0, 0, M_PI / 2));
  CHECK((r90 * Eigen::Vector3d(1, 0, 0) - Eigen::Vector3d(0, 1, 0)).norm() < 1e-15);

  Rng rng(9);
  const double h = 1e-6;
  for (int trial = 0; trial < 8; ++trial) {
    Eigen::Vector3d w = rng.gaussianVector(3);
    if (trial == 0) w.setZero();
    if (trial == 1) w *= 1e-10;
    for (int i = 0; i < 3; ++i) {
      Eigen::Vector3d wp = w, wm = w;
      wp(i) += h;
      wm(i) -= h;
      const Eigen::Matrix3d fd = (rodrigues(wp) - rodrigues(wm)) / (2 * h);
      CHECK((rodriguesDerivative(w, i) - fd).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("lip landmarks are barycentric combinations") {
  HeadAsset a = generateToyAsset(0);
  const Mesh m = evaluateMesh(a, Eigen::VectorXd::Zero(a.dBeta()), Eigen::VectorXd::Zero(kPoseDim),
                              Eigen::VectorXd::Zero(a.dPsi()));

  SUBCASE("degenerate weights pick a vertex exactly") {
    a.lip_bary.row(0) << 1.0, 0.0, 0.0;
    const Eigen::MatrixXd lm = lipLandmarks3d(a, m);
    const auto v = (*a.faces)(a.lip_faces(0), 0);
    CHECK(lm.row(0) == m.vertices.row(v));
  }

  SUBCASE("translation moves every landmark by the same offset") {
    const Eigen::MatrixXd lm = lipLandmarks3d(a, m);
    Mesh shifted = m;
    const Eigen::RowVector3d t(0.5, -1.25, 2.0);
    shifted.vertices = m.vertices.rowwise() + t;
    const Eigen::MatrixXd lm2 = lipLandmarks3d(a, shifted);
    CHECK(((lm2 - lm).rowwise() - t).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("matches an independent weighted sum") {
    Rng rng(21);
    Mesh random = m;
    random.vertices = rng.gaussianMatrix(a.numVertices(), 3);
    const Eigen::MatrixXd lm = lipLandmarks3d(a, random);
    for (Eigen::Index l = 0; l < a.numLandmarks(); ++l) {
      const auto f = a.lip_faces(l);
      Eigen::RowVector3d expect = a.lip_bary(l, 0) * random.vertices.row((*a.faces)(f, 0)) +
                                  a.lip_bary(l, 1) * random.vertices.row((*a.faces)(f, 1)) +
                                  a.lip_bary(l, 2) * random.vertices.row((*a.faces)(f, 2));
      CHECK((lm.row(l) - expect).norm() < 1e-15);
    }
  }
}

TEST_CASE("weak-perspective projection") {
  Rng rng(13);
  const Eigen::MatrixXd pts = rng.gaussianMatrix(3, 3);

  const Eigen::MatrixXd ident = projectWeakPerspective(pts, Eigen::Vector3d(1, 0, 0));
  CHECK(ident.col(0) == pts.col(0));
  CHECK(ident.col(1) == pts.col(1));

  const Eigen::MatrixXd doubled = projectWeakPerspective(pts, Eigen::Vector3d(2, 0, 0));
  CHECK((doubled - 2.0 * ident).cwiseAbs().maxCoeff() < 1e-15);

  const Eigen::Vector3d cam(1.5, 0.1, -0.2);
  const Eigen::MatrixXd proj = projectWeakPerspective(pts, cam);
  for (int i = 0; i < 3; ++i) {
    CHECK(proj(i, 0) == doctest::Approx(1.5 * (pts(i, 0) + 0.1)).epsilon(1e-15));
    CHECK(proj(i, 1) == doctest::Approx(1.5 * (pts(i, 1) - 0.2)).epsilon(1e-15));
  }

  SUBCASE("translation commutes with projection") {
    Eigen::Vector3d cam2(1.5, 0.1 + 0.3, -0.2 + 0.4);
    const Eigen::MatrixXd shifted = projectWeakPerspective(pts, cam2);
    CHECK((shifted.col(0) - (proj.col(0).array() + 1.5 * 0.3).matrix()).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((shifted.col(1) - (proj.col(1).array() + 1.5 * 0.4).matrix()).cwiseAbs().maxCoeff() <
          1e-12);
  }

  CHECK_THROWS_AS(projectWeakPerspective(pts, Eigen::Vector3d(0, 0, 0)), ArgumentError);
  CHECK_THROWS_AS(projectWeakPerspective(pts, Eigen::Vector3d(-1, 0, 0)), ArgumentError);
}

TEST_CASE("obj export round-trips and is byte-deterministic") {
  TempDir dir;
  const HeadAsset a = generateToyAsset(0);
  const Mesh m = evaluateMesh(a, Eigen::VectorXd::Zero(a.dBeta()), Eigen::VectorXd::Zero(kPoseDim),
                              Eigen::VectorXd::Zero(a.dPsi()));

  const auto p1 = dir.path / "a.obj";
  const auto p2 = dir.path / "b.obj";
  exportObj(m, p1);
  exportObj(m, p2);
  const std::string bytes = testutil::slurp(p1);
  CHECK(bytes == testutil::slurp(p2));

  int v_lines = 0;
  for (size_t pos = 0; (pos = bytes.find("\nv ", pos)) != std::string::npos; ++pos) ++v_lines;
  if (bytes.rfind("v ", 0) == 0) ++v_lines;
  CHECK(v_lines == 32);

  const Mesh r = importObj(p1);
  REQUIRE(r.vertices.rows() == m.vertices.rows());
  CHECK((r.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(*r.faces == *m.faces);

  const auto p3 = dir.path / "c.obj";
  exportObj(r, p3);
  CHECK(bytes == testutil::slurp(p3));
}

TEST_CASE("face parameter validation") {
  FaceParams p = FaceParams::zero(8, 10);
  CHECK_NOTHROW(p.validate());

  SUBCASE("overlong axis-angle rejected") {
    p.theta(0) = 4.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
  }
  SUBCASE("non-positive camera scale rejected") {
    p.camera(0) = 0.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
  }
  SUBCASE("nan rejected") {
    p.psi(3) = std::nan("");
    CHECK_THROWS_AS(p.validate(), ValidationError);
  }
}

TEST_CASE("evaluate_mesh rejects mismatched dimensions") {
  const HeadAsset a = generateToyAsset(0);
  CHECK_THROWS_AS(evaluateMesh(a, Eigen::VectorXd::Zero(a.dBeta() + 1),
                               Eigen::VectorXd::Zero(kPoseDim), Eigen::VectorXd::Zero(a.dPsi())),
                  ArgumentError);
  CHECK_THROWS_AS(evaluateMesh(a, Eigen::VectorXd::Zero(a.dBeta()), Eigen::VectorXd::Zero(12),
                               Eigen::VectorXd::Zero(a.dPsi())),
                  ArgumentError);
}
