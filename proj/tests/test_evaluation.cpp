#include <cmath>
#include <vector>

#include "anim3d/errors.hpp"
#include "anim3d/evaluation.hpp"
#include "anim3d/head_model.hpp"
#include "anim3d/lip_projection.hpp"
#include "anim3d/rng.hpp"
#include "doctest.h"

using namespace anim3d;

namespace {

VertexSequence randomSequence(Rng& rng, Eigen::Index T, Eigen::Index n) {
  VertexSequence seq;
  for (Eigen::Index t = 0; t < T; ++t)
    seq.frames.push_back(Eigen::MatrixXd::NullaryExpr(
        n, 3, [&](Eigen::Index, Eigen::Index) { return rng.gaussian(); }));
  return seq;
}

double bruteDistance(const VertexSequence& a, const VertexSequence& b) {
  double sum = 0.0;
  for (size_t t = 0; t < a.frames.size(); ++t) {
    double ss = 0.0;
    for (Eigen::Index v = 0; v < a.frames[t].rows(); ++v)
      for (int k = 0; k < 3; ++k)
        ss += (a.frames[t](v, k) - b.frames[t](v, k)) * (a.frames[t](v, k) - b.frames[t](v, k));
    sum += std::sqrt(ss);
  }
  return sum / static_cast<double>(a.frames.size());
}

double bruteVelocity(const VertexSequence& a, const VertexSequence& b) {
  double ss = 0.0;
  for (size_t t = 1; t < a.frames.size(); ++t)
    for (Eigen::Index v = 0; v < a.frames[t].rows(); ++v)
      for (int k = 0; k < 3; ++k) {
        const double dv = (a.frames[t](v, k) - a.frames[t - 1](v, k)) -
                          (b.frames[t](v, k) - b.frames[t - 1](v, k));
        ss += dv * dv;
      }
  return std::sqrt(ss) / static_cast<double>(a.frames.size() - 1);
}

VertexSequence scalarTrack(const std::vector<double>& xs) {
  VertexSequence seq;
  for (double x : xs) {
    Eigen::MatrixXd frame = Eigen::MatrixXd::Zero(1, 3);
    frame(0, 0) = x;
    seq.frames.push_back(frame);
  }
  return seq;
}

/// Batch maximum-a-posteriori smoother for the same constant-velocity model,
/// assembled as one sparse normal system and solved densely.
Eigen::VectorXd mapSmoothScalar(const Eigen::VectorXd& y, double q, double r) {
  const Eigen::Index T = y.size();
  Eigen::Matrix2d F;
  F << 1, 1, 0, 1;
  Eigen::Matrix2d Q;
  Q << q / 3.0, q / 2.0, q / 2.0, q;
  const Eigen::Matrix2d Qi = Q.inverse();
  const Eigen::Matrix2d P0i = (1e4 * r * Eigen::Matrix2d::Identity()).inverse();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * T, 2 * T);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(2 * T);
  A.block<2, 2>(0, 0) += P0i;
  b.segment<2>(0) += P0i * Eigen::Vector2d(y(0), 0.0);
  for (Eigen::Index t = 1; t < T; ++t) {
    A.block<2, 2>(2 * (t - 1), 2 * (t - 1)) += F.transpose() * Qi * F;
    A.block<2, 2>(2 * (t - 1), 2 * t) -= F.transpose() * Qi;
    A.block<2, 2>(2 * t, 2 * (t - 1)) -= Qi * F;
    A.block<2, 2>(2 * t, 2 * t) += Qi;
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    A(2 * t, 2 * t) += 1.0 / r;
    b(2 * t) += y(t) / r;
  }
  const Eigen::VectorXd x = A.ldlt().solve(b);
  Eigen::VectorXd out(T);
  for (Eigen::Index t = 0; t < T; ++t) out(t) = x(2 * t);
  return out;
}

}  // namespace

TEST_CASE("distance metrics average per-frame stacked norms") {
  VertexSequence gt = scalarTrack({0.0, 0.0});
  VertexSequence pred = gt;
  pred.frames[0](0, 0) = 1.0;
  pred.frames[1](0, 1) = 3.0;
  CHECK(lipDistanceError(pred, gt) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(expressionDistanceError(pred, gt) == doctest::Approx(2.0).epsilon(1e-15));

  Eigen::VectorXd per_frame = perFrameDistance(pred, gt);
  CHECK(per_frame(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(per_frame(1) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("velocity metrics divide one stacked norm by the step count") {
  VertexSequence pred = scalarTrack({0.0, 1.0, 2.0});
  VertexSequence gt = scalarTrack({5.0, 5.0, 5.0});
  CHECK(lipVelocityError(pred, gt) == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-15));
  CHECK(expressionVelocityError(pred, gt) ==
        doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-15));
}

TEST_CASE("metrics match a brute-force recomputation on random pairs") {
  Rng rng(321);
  for (int trial = 0; trial < 50; ++trial) {
    VertexSequence a = randomSequence(rng, 5, 10);
    VertexSequence b = randomSequence(rng, 5, 10);
    CHECK(lipDistanceError(a, b) == doctest::Approx(bruteDistance(a, b)).epsilon(1e-12));
    CHECK(lipVelocityError(a, b) == doctest::Approx(bruteVelocity(a, b)).epsilon(1e-12));
    CHECK(expressionDistanceError(a, b) == doctest::Approx(bruteDistance(a, b)).epsilon(1e-12));
    CHECK(expressionVelocityError(a, b) == doctest::Approx(bruteVelocity(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("normalized variants average per-vertex norms") {
  Rng rng(654);
  VertexSequence a = randomSequence(rng, 4, 6);
  VertexSequence b = randomSequence(rng, 4, 6);

  double lde = 0.0;
  for (size_t t = 0; t < 4; ++t) {
    double frame = 0.0;
    for (Eigen::Index v = 0; v < 6; ++v)
      frame += (a.frames[t].row(v) - b.frames[t].row(v)).norm();
    lde += frame / 6.0;
  }
  lde /= 4.0;
  CHECK(lipDistanceError(a, b, true) == doctest::Approx(lde).epsilon(1e-12));

  double lve = 0.0;
  for (size_t t = 1; t < 4; ++t)
    for (Eigen::Index v = 0; v < 6; ++v)
      lve += ((a.frames[t].row(v) - a.frames[t - 1].row(v)) -
              (b.frames[t].row(v) - b.frames[t - 1].row(v)))
                 .norm();
  lve /= 3.0 * 6.0;
  CHECK(lipVelocityError(a, b, true) == doctest::Approx(lve).epsilon(1e-12));
}

TEST_CASE("metrics are symmetric, non-negative, and zero on identical input") {
  Rng rng(987);
  VertexSequence a = randomSequence(rng, 6, 8);
  VertexSequence b = randomSequence(rng, 6, 8);
  CHECK(lipDistanceError(a, a) == 0.0);
  CHECK(lipVelocityError(a, a) == 0.0);
  CHECK(lipDistanceError(a, b) > 0.0);
  CHECK(lipDistanceError(a, b) == lipDistanceError(b, a));
  CHECK(lipVelocityError(a, b) == lipVelocityError(b, a));
}

TEST_CASE("velocity metrics ignore constant offsets") {
  Rng rng(135);
  VertexSequence a = randomSequence(rng, 5, 7);
  VertexSequence b = randomSequence(rng, 5, 7);
  const double base = lipVelocityError(a, b);

  VertexSequence shifted = a;
  Eigen::RowVector3d offset(0.4, -1.2, 2.5);
  for (auto& frame : shifted.frames) frame.rowwise() += offset;
  CHECK(lipVelocityError(shifted, b) == doctest::Approx(base).epsilon(1e-12));

  VertexSequence shifted_gt = b;
  for (auto& frame : shifted_gt.frames) frame.rowwise() += offset;
  CHECK(expressionVelocityError(a, shifted_gt) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("metrics reject malformed input") {
  Rng rng(246);
  VertexSequence a = randomSequence(rng, 3, 4);
  VertexSequence b = randomSequence(rng, 3, 5);
  CHECK_THROWS_AS(lipDistanceError(a, b), ArgumentError);
  VertexSequence c = randomSequence(rng, 4, 4);
  CHECK_THROWS_AS(lipDistanceError(a, c), ArgumentError);
  VertexSequence single = randomSequence(rng, 1, 4);
  CHECK_THROWS_AS(lipVelocityError(single, single), ArgumentError);
  CHECK(lipDistanceError(single, single) == 0.0);

  VertexSequence bad = a;
  bad.frames[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(lipDistanceError(bad, a), ValidationError);
  VertexSequence empty;
  CHECK_THROWS_AS(empty.validate(), ValidationError);
}

TEST_CASE("vertex selection picks rows and marks the subset") {
  Rng rng(357);
  VertexSequence seq = randomSequence(rng, 3, 6);
  VertexSequence lips = selectVertices(seq, {1, 4});
  CHECK(lips.role == VertexRole::kLipSubset);
  CHECK(lips.numVertices() == 2);
  for (int t = 0; t < 3; ++t) {
    CHECK(lips.frames[static_cast<size_t>(t)].row(0) == seq.frames[static_cast<size_t>(t)].row(1));
    CHECK(lips.frames[static_cast<size_t>(t)].row(1) == seq.frames[static_cast<size_t>(t)].row(4));
  }
  CHECK_THROWS_AS(selectVertices(seq, {}), ArgumentError);
  CHECK_THROWS_AS(selectVertices(seq, {6}), ArgumentError);
  CHECK_THROWS_AS(selectVertices(seq, {-1}), ArgumentError);
}

TEST_CASE("vertex sequences evaluate from parameter tracks") {
  const HeadAsset asset = generateToyAsset(77);
  std::vector<FaceParams> frames;
  for (int t = 0; t < 3; ++t) {
    FaceParams p = FaceParams::zero(asset.dBeta(), asset.dPsi());
    p.psi.setConstant(0.1 * t);
    frames.push_back(p);
  }
  VertexSequence seq = vertexSequenceFromParams(asset, frames);
  CHECK(seq.numFrames() == 3);
  CHECK(seq.numVertices() == asset.numVertices());
  const Mesh direct = evaluateMesh(asset, frames[2]);
  CHECK((seq.frames[2] - direct.vertices).cwiseAbs().maxCoeff() == 0.0);

  const auto lip_ids = lipVertexIds(asset);
  REQUIRE_FALSE(lip_ids.empty());
  MetricReport report = computeMetrics(seq, seq, lip_ids, "self");
  CHECK(report.lde == 0.0);
  CHECK(report.lve == 0.0);
  CHECK(report.ede == 0.0);
  CHECK(report.eve == 0.0);
  CHECK(report.n_frames == 3);
}

TEST_CASE("metric reports serialize to json and back") {
  Rng rng(468);
  VertexSequence a = randomSequence(rng, 4, 9);
  VertexSequence b = randomSequence(rng, 4, 9);
  MetricReport report = computeMetrics(a, b, {0, 2, 5}, "clip_007");
  CHECK(report.lde > 0.0);
  CHECK(report.per_frame_lde.size() == 4);
  CHECK(report.per_frame_ede.size() == 4);
  CHECK(report.lde ==
        doctest::Approx(report.per_frame_lde.mean()).epsilon(1e-12));

  const nlohmann::json j = toJson(report);
  CHECK(j.at("clip_id") == "clip_007");
  CHECK(j.at("per_frame").at("lde").size() == 4);
  MetricReport back = metricReportFromJson(j);
  CHECK(back.lde == report.lde);
  CHECK(back.lve == report.lve);
  CHECK(back.ede == report.ede);
  CHECK(back.eve == report.eve);
  CHECK(back.n_frames == report.n_frames);
  CHECK((back.per_frame_lde.array() == report.per_frame_lde.array()).all());

  CHECK_THROWS_AS(metricReportFromJson(nlohmann::json{{"lde", 1.0}}), SchemaError);

  const std::string table = renderMetricTable({report});
  CHECK(table.find("clip_007") != std::string::npos);
  CHECK(table.find("lde") != std::string::npos);
}

TEST_CASE("the smoother matches a batch map solve") {
  Rng rng(579);
  const double q = 0.05, r = 0.3;
  Eigen::VectorXd y(20);
  double walk = 0.0;
  for (int t = 0; t < 20; ++t) {
    walk += 0.3 * rng.gaussian();
    y(t) = walk + 0.5 * rng.gaussian();
  }
  const Eigen::MatrixXd smoothed = kalmanSmooth(y, SmootherConfig{q, r});
  const Eigen::VectorXd map = mapSmoothScalar(y, q, r);
  CHECK((smoothed.col(0) - map).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("the smoother reproduces observations in the exact-measurement limit") {
  Rng rng(680);
  Eigen::VectorXd y(30);
  for (int t = 0; t < 30; ++t) y(t) = std::sin(0.3 * t) + 0.2 * rng.gaussian();
  const double q = 0.01;
  const Eigen::MatrixXd smoothed = kalmanSmooth(y, SmootherConfig{q, 1e-12 * q});
  CHECK((smoothed.col(0) - y).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("a rigid smoother recovers the least-squares line") {
  Rng rng(791);
  const int T = 60;
  Eigen::VectorXd y(T);
  for (int t = 0; t < T; ++t) y(t) = 1.5 + 0.25 * t + 0.1 * rng.gaussian();

  Eigen::MatrixXd design(T, 2);
  for (int t = 0; t < T; ++t) {
    design(t, 0) = 1.0;
    design(t, 1) = t;
  }
  const Eigen::Vector2d coef = design.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd fitted = design * coef;
  const double residual_scale = std::sqrt((y - fitted).squaredNorm() / T);

  const double r = 0.05;
  const Eigen::MatrixXd smoothed = kalmanSmooth(y, SmootherConfig{1e-8 * r, r});
  CHECK((smoothed.col(0) - fitted).cwiseAbs().maxCoeff() < 3.0 * residual_scale);
}

TEST_CASE("the smoother commutes with constant shifts") {
  Rng rng(802);
  Eigen::MatrixXd seq(40, 3);
  for (int t = 0; t < 40; ++t)
    for (int d = 0; d < 3; ++d) seq(t, d) = rng.gaussian();
  const SmootherConfig config{1e-3, 1e-2};
  const Eigen::MatrixXd base = kalmanSmooth(seq, config);
  Eigen::RowVector3d c(7.0, -3.0, 100.0);
  const Eigen::MatrixXd shifted = kalmanSmooth(seq.rowwise() + c, config);
  CHECK((shifted - (base.rowwise() + c)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("the smoother contracts white noise") {
  int reduced = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(9000 + static_cast<std::uint64_t>(seed));
    Eigen::VectorXd y(50);
    for (int t = 0; t < 50; ++t) y(t) = 2.0 + rng.gaussian();
    const Eigen::MatrixXd smoothed = kalmanSmooth(y, SmootherConfig{1e-3, 1e-2});
    const auto variance = [](const Eigen::VectorXd& v) {
      return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size());
    };
    if (variance(smoothed.col(0)) <= variance(y)) ++reduced;
  }
  CHECK(reduced >= 95);
}

TEST_CASE("the smoother treats columns independently") {
  Rng rng(913);
  Eigen::MatrixXd seq(25, 4);
  for (int t = 0; t < 25; ++t)
    for (int d = 0; d < 4; ++d) seq(t, d) = rng.gaussian();
  const SmootherConfig config{2e-3, 3e-2};
  const Eigen::MatrixXd joint = kalmanSmooth(seq, config);
  for (int d = 0; d < 4; ++d) {
    const Eigen::MatrixXd single = kalmanSmooth(seq.col(d), config);
    CHECK((joint.col(d).array() == single.col(0).array()).all());
  }
}

TEST_CASE("the smoother rejects bad input") {
  Eigen::MatrixXd seq = Eigen::MatrixXd::Zero(5, 1);
  CHECK_THROWS_AS(kalmanSmooth(seq, SmootherConfig{0.0, 1.0}), ArgumentError);
  CHECK_THROWS_AS(kalmanSmooth(seq, SmootherConfig{1.0, -1.0}), ArgumentError);
  CHECK_THROWS_AS(kalmanSmooth(Eigen::MatrixXd::Zero(1, 1), SmootherConfig{1.0, 1.0}),
                  ArgumentError);
  seq(2, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(kalmanSmooth(seq, SmootherConfig{1.0, 1.0}), ArgumentError);
}
