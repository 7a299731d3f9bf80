#include "anim3d/evaluation.hpp"

#include <cmath>
#include <cstdio>

#include "anim3d/errors.hpp"

namespace anim3d {

void VertexSequence::validate() const {
  if (frames.empty()) throw ValidationError("vertex sequence has no frames");
  const Eigen::Index n = frames.front().rows();
  if (n < 1) throw ValidationError("vertex sequence has no vertices");
  for (size_t t = 0; t < frames.size(); ++t) {
    const auto& frame = frames[t];
    if (frame.rows() != n || frame.cols() != 3)
      throw ValidationError("frame " + std::to_string(t) + " is " + std::to_string(frame.rows()) +
                            "x" + std::to_string(frame.cols()) + ", expected " + std::to_string(n) +
                            "x3");
    if (!frame.allFinite())
      throw ValidationError("frame " + std::to_string(t) + " has non-finite vertices");
  }
}

VertexSequence selectVertices(const VertexSequence& seq, const std::vector<Eigen::Index>& ids) {
  seq.validate();
  if (ids.empty()) throw ArgumentError("selectVertices: empty vertex list");
  const Eigen::Index n = seq.numVertices();
  for (Eigen::Index id : ids)
    if (id < 0 || id >= n)
      throw ArgumentError("vertex id " + std::to_string(id) + " is outside [0, " +
                          std::to_string(n) + ")");
  VertexSequence out;
  out.role = VertexRole::kLipSubset;
  out.frames.reserve(seq.frames.size());
  for (const auto& frame : seq.frames) {
    Eigen::MatrixXd picked(static_cast<Eigen::Index>(ids.size()), 3);
    for (size_t i = 0; i < ids.size(); ++i) picked.row(static_cast<Eigen::Index>(i)) = frame.row(ids[i]);
    out.frames.push_back(std::move(picked));
  }
  return out;
}

VertexSequence vertexSequenceFromParams(const HeadAsset& asset,
                                        const std::vector<FaceParams>& frames) {
  VertexSequence out;
  out.frames.reserve(frames.size());
  for (const FaceParams& p : frames) out.frames.push_back(evaluateMesh(asset, p).vertices);
  out.validate();
  return out;
}

namespace {

void requireSameShape(const VertexSequence& pred, const VertexSequence& gt) {
  pred.validate();
  gt.validate();
  if (pred.numFrames() != gt.numFrames() || pred.numVertices() != gt.numVertices())
    throw ArgumentError("sequences differ in shape: " + std::to_string(pred.numFrames()) + "x" +
                        std::to_string(pred.numVertices()) + " vs " +
                        std::to_string(gt.numFrames()) + "x" + std::to_string(gt.numVertices()));
}

double distanceError(const VertexSequence& pred, const VertexSequence& gt, bool normalized) {
  requireSameShape(pred, gt);
  const Eigen::Index T = pred.numFrames();
  double total = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::MatrixXd diff = pred.frames[static_cast<size_t>(t)] - gt.frames[static_cast<size_t>(t)];
    if (normalized)
      total += diff.rowwise().norm().mean();
    else
      total += diff.norm();
  }
  return total / static_cast<double>(T);
}

double velocityError(const VertexSequence& pred, const VertexSequence& gt, bool normalized) {
  requireSameShape(pred, gt);
  const Eigen::Index T = pred.numFrames();
  if (T < 2) throw ArgumentError("velocity metrics need at least 2 frames");
  double accum = 0.0;
  for (Eigen::Index t = 1; t < T; ++t) {
    const Eigen::MatrixXd dv =
        (pred.frames[static_cast<size_t>(t)] - pred.frames[static_cast<size_t>(t - 1)]) -
        (gt.frames[static_cast<size_t>(t)] - gt.frames[static_cast<size_t>(t - 1)]);
    if (normalized)
      accum += dv.rowwise().norm().sum();
    else
      accum += dv.squaredNorm();
  }
  if (normalized)
    return accum / static_cast<double>((T - 1) * pred.numVertices());
  return std::sqrt(accum) / static_cast<double>(T - 1);
}

}  // namespace

double lipDistanceError(const VertexSequence& pred, const VertexSequence& gt, bool normalized) {
  return distanceError(pred, gt, normalized);
}

double lipVelocityError(const VertexSequence& pred, const VertexSequence& gt, bool normalized) {
  return velocityError(pred, gt, normalized);
}

double expressionDistanceError(const VertexSequence& pred, const VertexSequence& gt,
                               bool normalized) {
  return distanceError(pred, gt, normalized);
}

double expressionVelocityError(const VertexSequence& pred, const VertexSequence& gt,
                               bool normalized) {
  return velocityError(pred, gt, normalized);
}

Eigen::VectorXd perFrameDistance(const VertexSequence& pred, const VertexSequence& gt) {
  requireSameShape(pred, gt);
  const Eigen::Index T = pred.numFrames();
  Eigen::VectorXd out(T);
  for (Eigen::Index t = 0; t < T; ++t)
    out(t) =
        (pred.frames[static_cast<size_t>(t)] - gt.frames[static_cast<size_t>(t)]).norm();
  return out;
}

MetricReport computeMetrics(const VertexSequence& pred, const VertexSequence& gt,
                            const std::vector<Eigen::Index>& lip_ids,
                            const std::string& clip_id) {
  requireSameShape(pred, gt);
  const VertexSequence pred_lips = selectVertices(pred, lip_ids);
  const VertexSequence gt_lips = selectVertices(gt, lip_ids);
  MetricReport report;
  report.clip_id = clip_id;
  report.n_frames = pred.numFrames();
  report.lde = lipDistanceError(pred_lips, gt_lips);
  report.ede = expressionDistanceError(pred, gt);
  report.per_frame_lde = perFrameDistance(pred_lips, gt_lips);
  report.per_frame_ede = perFrameDistance(pred, gt);
  if (pred.numFrames() >= 2) {
    report.lve = lipVelocityError(pred_lips, gt_lips);
    report.eve = expressionVelocityError(pred, gt);
  }
  return report;
}

nlohmann::json toJson(const MetricReport& report) {
  nlohmann::json per_frame;
  per_frame["lde"] = std::vector<double>(report.per_frame_lde.begin(), report.per_frame_lde.end());
  per_frame["ede"] = std::vector<double>(report.per_frame_ede.begin(), report.per_frame_ede.end());
  return nlohmann::json{{"lde", report.lde},         {"lve", report.lve},
                        {"ede", report.ede},         {"eve", report.eve},
                        {"per_frame", per_frame},    {"clip_id", report.clip_id},
                        {"n_frames", report.n_frames}};
}

MetricReport metricReportFromJson(const nlohmann::json& j) {
  MetricReport report;
  try {
    report.lde = j.at("lde").get<double>();
    report.lve = j.at("lve").get<double>();
    report.ede = j.at("ede").get<double>();
    report.eve = j.at("eve").get<double>();
    report.clip_id = j.at("clip_id").get<std::string>();
    report.n_frames = j.at("n_frames").get<Eigen::Index>();
    const auto lde = j.at("per_frame").at("lde").get<std::vector<double>>();
    const auto ede = j.at("per_frame").at("ede").get<std::vector<double>>();
    report.per_frame_lde = Eigen::Map<const Eigen::VectorXd>(lde.data(), static_cast<Eigen::Index>(lde.size()));
    report.per_frame_ede = Eigen::Map<const Eigen::VectorXd>(ede.data(), static_cast<Eigen::Index>(ede.size()));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("metric report: ") + e.what());
  }
  return report;
}

std::string renderMetricTable(const std::vector<MetricReport>& reports) {
  std::string out = "clip            frames       lde       lve       ede       eve\n";
  char line[160];
  for (const MetricReport& r : reports) {
    std::snprintf(line, sizeof(line), "%-15s %6lld %9.4g %9.4g %9.4g %9.4g\n",
                  r.clip_id.empty() ? "-" : r.clip_id.c_str(),
                  static_cast<long long>(r.n_frames), r.lde, r.lve, r.ede, r.eve);
    out += line;
  }
  return out;
}

void SmootherConfig::validate() const {
  if (!(q > 0.0) || !(r > 0.0))
    throw ArgumentError("smoother noise levels must be positive (q=" + std::to_string(q) +
                        ", r=" + std::to_string(r) + ")");
}

Eigen::MatrixXd kalmanSmooth(const Eigen::MatrixXd& seq, const SmootherConfig& config) {
  config.validate();
  const Eigen::Index T = seq.rows();
  if (T < 2) throw ArgumentError("kalmanSmooth needs at least 2 frames");
  if (!seq.allFinite()) throw ArgumentError("kalmanSmooth: non-finite input");

  Eigen::Matrix2d F;
  F << 1, 1, 0, 1;
  Eigen::Matrix2d Q;
  Q << config.q / 3.0, config.q / 2.0, config.q / 2.0, config.q;
  const Eigen::RowVector2d H(1, 0);
  const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();

  Eigen::MatrixXd out(T, seq.cols());
  std::vector<Eigen::Vector2d> x_pred(static_cast<size_t>(T)), x_filt(static_cast<size_t>(T));
  std::vector<Eigen::Matrix2d> p_pred(static_cast<size_t>(T)), p_filt(static_cast<size_t>(T));
  for (Eigen::Index d = 0; d < seq.cols(); ++d) {
    const Eigen::VectorXd y = seq.col(d);
    for (Eigen::Index t = 0; t < T; ++t) {
      if (t == 0) {
        x_pred[0] = Eigen::Vector2d(y(0), 0.0);
        p_pred[0] = 1e4 * config.r * I;
      } else {
        x_pred[static_cast<size_t>(t)] = F * x_filt[static_cast<size_t>(t - 1)];
        p_pred[static_cast<size_t>(t)] = F * p_filt[static_cast<size_t>(t - 1)] * F.transpose() + Q;
      }
      const double innovation = y(t) - x_pred[static_cast<size_t>(t)](0);
      const double s = p_pred[static_cast<size_t>(t)](0, 0) + config.r;
      const Eigen::Vector2d gain = p_pred[static_cast<size_t>(t)].col(0) / s;
      x_filt[static_cast<size_t>(t)] = x_pred[static_cast<size_t>(t)] + gain * innovation;
      const Eigen::Matrix2d a = I - gain * H;
      p_filt[static_cast<size_t>(t)] =
          a * p_pred[static_cast<size_t>(t)] * a.transpose() + gain * config.r * gain.transpose();
    }

    Eigen::Vector2d xs = x_filt[static_cast<size_t>(T - 1)];
    out(T - 1, d) = xs(0);
    for (Eigen::Index t = T - 2; t >= 0; --t) {
      const Eigen::Matrix2d smoother_gain = p_filt[static_cast<size_t>(t)] * F.transpose() *
                                            p_pred[static_cast<size_t>(t + 1)].inverse();
      xs = x_filt[static_cast<size_t>(t)] + smoother_gain * (xs - x_pred[static_cast<size_t>(t + 1)]);
      out(t, d) = xs(0);
    }
  }
  return out;
}

}  // namespace anim3d
