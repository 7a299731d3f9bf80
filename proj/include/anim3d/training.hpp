#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anim3d/audio.hpp"
#include "anim3d/generator.hpp"
#include "anim3d/head_model.hpp"
#include "anim3d/tensor.hpp"

namespace anim3d {

/// One training clip: per-frame ground-truth parameters, the aligned audio
/// track, optional projected 2-D lip landmarks, and provenance ids.
struct ClipRecord {
  double fps = 25.0;
  std::vector<FaceParams> frames;
  Waveform audio;
  std::optional<std::vector<Eigen::MatrixXd>> gt_lip_2d;  // per frame, L x 2
  int style_id = 0;
  int identity_id = 0;
  std::string clip_id;

  Eigen::Index numFrames() const { return static_cast<Eigen::Index>(frames.size()); }
  /// Frames must share dimensions and pass their own checks; gt_lip_2d,
  /// when present, must cover every frame with a consistent landmark count.
  void validate() const;
};

struct TrainConfig {
  int stage1_steps = 5000;
  int stage2_steps = 2000;  // 0 runs stage 1 only
  int batch1 = 128;
  int batch2 = 16;
  double lr = 1e-4;
  double lambda_reg = 1.0;
  double lambda_mc = 0.1;
  double lambda_pho = 0.0;  // term not implemented; any other value is rejected
  double lambda_emo = 0.0;  // term not implemented; any other value is rejected
  int T = 12;
  std::uint64_t seed = 0;
  bool squared_norms = false;  // square the per-frame norms in the losses
  /// Early exit for stage 1: stop once the step loss drops below this
  /// fraction of the first step's loss. 0 disables; an early exit shortens
  /// the returned loss history accordingly.
  double stage1_stop_fraction = 0.0;

  void validate() const;
};

/// Sum over frames of the per-frame Euclidean errors of the expression and
/// jaw predictions. Rows are frames. With `squared` the norms are squared.
double lossReg(const Eigen::MatrixXd& psi_pred, const Eigen::MatrixXd& psi_gt,
               const Eigen::MatrixXd& jaw_pred, const Eigen::MatrixXd& jaw_gt,
               bool squared = false);

/// Mouth-closure term: per frame, evaluate the mesh from the predicted
/// parameters, project the lip landmarks with that frame's camera, and sum
/// the L1 differences to the ground-truth 2-D landmarks.
double lossMc(const HeadAsset& asset, const std::vector<FaceParams>& params_pred,
              const std::vector<Eigen::MatrixXd>& gt_lip_2d);

/// lambda_reg * l_reg + lambda_mc * l_mc. The photometric and emotion slots
/// are accepted for config-surface compatibility but must be zero.
double totalLoss(double l_reg, double l_mc, double lambda_reg, double lambda_mc,
                 double lambda_pho = 0.0, double lambda_emo = 0.0);

/// Tape versions of the losses, for training.
ad::Tensor lossRegGraph(const ad::Tensor& psi_pred, const Eigen::MatrixXd& psi_gt,
                        const ad::Tensor& jaw_pred, const Eigen::MatrixXd& jaw_gt,
                        bool squared = false);
ad::Tensor lossMcGraph(const HeadAsset& asset, const std::vector<FaceParams>& base_frames,
                       const ad::Tensor& psi_pred, const ad::Tensor& jaw_pred,
                       const std::vector<Eigen::MatrixXd>& gt_lip_2d);

/// Deterministic desk-scale dataset: smooth low-pass-filtered activity
/// envelopes drive both the jaw opening and a per-style expression blend,
/// and the audio is a sinusoid mixture whose amplitude follows the same
/// envelope, so per-frame loudness correlates with the jaw angle. Lip
/// ground truth is the projection of each clip's own mesh sequence.
std::vector<ClipRecord> makeSyntheticDataset(std::uint64_t seed, int n_clips, int n_frames,
                                             const HeadAsset& asset, double fps = 25.0,
                                             int n_styles = 4);

struct TrainResult {
  GeneratorWeights weights;
  std::vector<double> history;  // per-step total loss, stages concatenated
};

/// Two-stage schedule sharing one Adam state: stage 1 trains with the
/// regression loss alone, stage 2 adds the mouth-closure term. Clips are
/// drawn in epoch-shuffled order and each draw takes a random contiguous
/// T-frame segment. Batch sizes larger than the dataset are clamped with a
/// warning. Identical seeds give bit-identical results.
TrainResult train(const GeneratorConfig& gen_config, const TrainConfig& train_config,
                  const std::vector<ClipRecord>& dataset, const HeadAsset& asset);

// ---- file formats ----

/// Frame-major parameter file: arrays beta/theta/psi/albedo/lighting/camera,
/// one row per frame.
void saveParamsFile(const std::vector<FaceParams>& frames, const std::filesystem::path& path,
                    double fps = 0.0);
struct ParamsFile {
  std::vector<FaceParams> frames;
  double fps = 0.0;  // 0 when the file does not carry a rate
};
ParamsFile loadParamsFile(const std::filesystem::path& path);

/// Clip directory: params.anim3d, audio.wav, manifest.json, and lip2d.anim3d
/// when ground-truth landmarks are present.
void saveClip(const ClipRecord& clip, const std::filesystem::path& dir);
ClipRecord loadClip(const std::filesystem::path& dir);

/// Dataset directory: one sub-directory per clip, named by clip_id.
void saveDataset(const std::vector<ClipRecord>& clips, const std::filesystem::path& dir);
std::vector<ClipRecord> loadDataset(const std::filesystem::path& dir);

}  // namespace anim3d
