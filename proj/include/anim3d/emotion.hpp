#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace anim3d {

/// Recognized emotion labels for template extraction.
const std::vector<std::string>& emotionLabels();
bool isEmotionLabel(const std::string& label);

/// Mean expression code over the frames whose predicted label matches the
/// template's emotion.
struct EmotionTemplate {
  std::string label;
  Eigen::VectorXd psi_temp;
  Eigen::Index n_valid_frames = 0;

  void validate() const;
};

/// One clip's expression codes plus per-frame predicted emotion labels.
struct LabeledClip {
  Eigen::MatrixXd psi;              // n_frames x d_psi
  std::vector<std::string> labels;  // n_frames entries
};

/// Averages psi over every frame of every clip whose label equals `target`.
/// Throws ValidationError when no frame matches.
EmotionTemplate extractTemplate(const std::vector<LabeledClip>& clips, const std::string& target);

/// Intensity weights with the two mouth dimensions (stored indices 0 and 3;
/// the model's 1st and 4th expression components) pinned to zero so emotion
/// never disturbs lip sync.
struct WeightVector {
  Eigen::VectorXd w;

  void validate() const;
};

WeightVector makeWeight(double intensity, Eigen::Index d_psi);

/// psi + w (*) psi_temp; the masked dimensions pass through bit-exactly.
Eigen::VectorXd applyEmotion(const Eigen::VectorXd& psi, const EmotionTemplate& tmpl,
                             const WeightVector& w);

/// Mean-centered 2-component PCA of expression codes, for cluster plots.
/// Sign convention: the largest-magnitude loading of each component is
/// positive. Degenerate directions project to 0.
struct Projection2d {
  Eigen::MatrixXd points;            // N x 2
  Eigen::Vector2d variance_explained;  // fraction per component
};

Projection2d projectCodes2d(const Eigen::MatrixXd& codes);

// ---- file formats ----

void saveTemplate(const EmotionTemplate& tmpl, const std::filesystem::path& path);
EmotionTemplate loadTemplate(const std::filesystem::path& path);

/// Label sidecar: a JSON array of per-frame label strings.
void saveLabels(const std::vector<std::string>& labels, const std::filesystem::path& path);
std::vector<std::string> loadLabels(const std::filesystem::path& path);

}  // namespace anim3d
