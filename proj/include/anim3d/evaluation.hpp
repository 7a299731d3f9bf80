#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "anim3d/head_model.hpp"
#include "json.hpp"

namespace anim3d {

/// A vertex trajectory: one n x 3 position matrix per frame.
enum class VertexRole { kAll, kLipSubset };

struct VertexSequence {
  std::vector<Eigen::MatrixXd> frames;  // each n x 3
  VertexRole role = VertexRole::kAll;

  Eigen::Index numFrames() const { return static_cast<Eigen::Index>(frames.size()); }
  Eigen::Index numVertices() const { return frames.empty() ? 0 : frames.front().rows(); }
  /// Throws unless every frame is finite and n x 3 with a consistent n.
  void validate() const;
};

/// Keeps only the listed vertex rows of every frame and marks the result as
/// the lip subset.
VertexSequence selectVertices(const VertexSequence& seq, const std::vector<Eigen::Index>& ids);

/// Evaluates the mesh for every frame and stacks the vertex positions.
VertexSequence vertexSequenceFromParams(const HeadAsset& asset,
                                        const std::vector<FaceParams>& frames);

/// Mean per-frame distance: (1/T) sum_t of the Euclidean norm over the
/// stacked coordinates of frame t's difference. `normalized` divides each
/// frame's contribution by the vertex count (a per-vertex mean of norms).
double lipDistanceError(const VertexSequence& pred, const VertexSequence& gt,
                        bool normalized = false);

/// Velocity error: the Euclidean norm over the whole stacked tensor of
/// frame-to-frame velocity differences, divided by T-1. `normalized` averages
/// per-vertex velocity-error norms instead.
double lipVelocityError(const VertexSequence& pred, const VertexSequence& gt,
                        bool normalized = false);

/// Same formulas applied to the full vertex set.
double expressionDistanceError(const VertexSequence& pred, const VertexSequence& gt,
                               bool normalized = false);
double expressionVelocityError(const VertexSequence& pred, const VertexSequence& gt,
                               bool normalized = false);

/// Per-frame stacked-coordinate norms of the difference, i.e. the terms that
/// lipDistanceError averages.
Eigen::VectorXd perFrameDistance(const VertexSequence& pred, const VertexSequence& gt);

struct MetricReport {
  double lde = 0.0;
  double lve = 0.0;
  double ede = 0.0;
  double eve = 0.0;
  Eigen::VectorXd per_frame_lde;
  Eigen::VectorXd per_frame_ede;
  std::string clip_id;
  Eigen::Index n_frames = 0;
};

/// All four metrics for one clip: pred/gt are full vertex sequences, lip_ids
/// selects the subset the lip metrics run on.
MetricReport computeMetrics(const VertexSequence& pred, const VertexSequence& gt,
                            const std::vector<Eigen::Index>& lip_ids,
                            const std::string& clip_id = "");

nlohmann::json toJson(const MetricReport& report);
MetricReport metricReportFromJson(const nlohmann::json& j);

/// Aligned plain-text rendering of the headline numbers.
std::string renderMetricTable(const std::vector<MetricReport>& reports);

/// Constant-velocity smoother noise levels. q scales the process noise of
/// the velocity random walk, r is the observation noise variance.
struct SmootherConfig {
  double q = 1e-3;
  double r = 1e-2;
  void validate() const;
};

/// Smooths each column of seq [T, D] independently with a constant-velocity
/// Kalman filter followed by RTS backward smoothing. The state prior is
/// (first observation, zero velocity) with covariance 1e4 * r * I, so the
/// result is shift-equivariant.
Eigen::MatrixXd kalmanSmooth(const Eigen::MatrixXd& seq, const SmootherConfig& config);

}  // namespace anim3d
