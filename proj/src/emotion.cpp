#include "anim3d/emotion.hpp"

#include <algorithm>
#include <fstream>

#include "anim3d/container.hpp"
#include "anim3d/errors.hpp"
#include "json.hpp"

namespace anim3d {

const std::vector<std::string>& emotionLabels() {
  static const std::vector<std::string> labels = {"angry", "contempt", "happy", "sad", "surprise"};
  return labels;
}

bool isEmotionLabel(const std::string& label) {
  const auto& all = emotionLabels();
  return std::find(all.begin(), all.end(), label) != all.end();
}

void EmotionTemplate::validate() const {
  if (!isEmotionLabel(label)) throw ValidationError("unknown emotion label '" + label + "'");
  if (psi_temp.size() < 1 || !psi_temp.allFinite())
    throw ValidationError("emotion template has an empty or non-finite code");
  if (n_valid_frames < 1) throw ValidationError("emotion template built from zero frames");
}

EmotionTemplate extractTemplate(const std::vector<LabeledClip>& clips, const std::string& target) {
  if (!isEmotionLabel(target)) throw ArgumentError("unknown emotion label '" + target + "'");
  Eigen::VectorXd sum;
  Eigen::Index count = 0;
  for (size_t c = 0; c < clips.size(); ++c) {
    const LabeledClip& clip = clips[c];
    if (static_cast<Eigen::Index>(clip.labels.size()) != clip.psi.rows())
      throw ArgumentError("clip " + std::to_string(c) + " has " +
                          std::to_string(clip.labels.size()) + " labels for " +
                          std::to_string(clip.psi.rows()) + " frames");
    if (sum.size() == 0)
      sum = Eigen::VectorXd::Zero(clip.psi.cols());
    else if (clip.psi.cols() != sum.size())
      throw ArgumentError("clip " + std::to_string(c) + " has a different expression dimension");
    for (Eigen::Index t = 0; t < clip.psi.rows(); ++t)
      if (clip.labels[static_cast<size_t>(t)] == target) {
        sum += clip.psi.row(t).transpose();
        ++count;
      }
  }
  if (count == 0)
    throw ValidationError("no frame is labeled '" + target + "'; cannot build a template");
  EmotionTemplate out;
  out.label = target;
  out.psi_temp = sum / static_cast<double>(count);
  out.n_valid_frames = count;
  out.validate();
  return out;
}

void WeightVector::validate() const {
  if (w.size() < 4)
    throw ValidationError("weight vector needs at least 4 entries to pin the mouth dimensions");
  if (w(0) != 0.0 || w(3) != 0.0)
    throw ValidationError("weight entries 0 and 3 must be exactly zero");
  double intensity = -1.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (i == 0 || i == 3) continue;
    if (w(i) < 0.0 || w(i) > 1.0) throw ValidationError("weight entries must lie in [0, 1]");
    if (intensity < 0.0)
      intensity = w(i);
    else if (w(i) != intensity)
      throw ValidationError("all unmasked weight entries must be equal");
  }
}

WeightVector makeWeight(double intensity, Eigen::Index d_psi) {
  if (intensity < 0.0 || intensity > 1.0)
    throw ArgumentError("intensity " + std::to_string(intensity) + " is outside [0, 1]");
  if (d_psi < 4)
    throw ArgumentError("d_psi must be at least 4 so the mouth dimensions exist");
  WeightVector out;
  out.w = Eigen::VectorXd::Constant(d_psi, intensity);
  out.w(0) = 0.0;
  out.w(3) = 0.0;
  out.validate();
  return out;
}

Eigen::VectorXd applyEmotion(const Eigen::VectorXd& psi, const EmotionTemplate& tmpl,
                             const WeightVector& w) {
  tmpl.validate();
  w.validate();
  if (psi.size() != tmpl.psi_temp.size() || psi.size() != w.w.size())
    throw ArgumentError("applyEmotion: psi has " + std::to_string(psi.size()) +
                        " entries, template " + std::to_string(tmpl.psi_temp.size()) +
                        ", weights " + std::to_string(w.w.size()));
  Eigen::VectorXd out = psi.array() + w.w.array() * tmpl.psi_temp.array();
  out(0) = psi(0);  // the mask guarantee is exact, not just w = 0
  out(3) = psi(3);
  return out;
}

Projection2d projectCodes2d(const Eigen::MatrixXd& codes) {
  if (codes.rows() < 3) throw ArgumentError("projectCodes2d needs at least 3 codes");
  if (codes.cols() < 1) throw ArgumentError("projectCodes2d: empty codes");
  const Eigen::RowVectorXd mean = codes.colwise().mean();
  const Eigen::MatrixXd centered = codes.rowwise() - mean;
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(codes.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success)
    throw InternalError("projectCodes2d: eigendecomposition failed");
  const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
  const double total = std::max(evals.sum(), 0.0);

  Projection2d out;
  out.points = Eigen::MatrixXd::Zero(codes.rows(), 2);
  out.variance_explained = Eigen::Vector2d::Zero();
  const double floor = std::max(1e-12 * std::max(total, 1.0), 0.0);
  for (int k = 0; k < 2 && k < evals.size(); ++k) {
    const Eigen::Index col = evals.size() - 1 - k;  // largest first
    if (evals(col) <= floor) continue;              // degenerate direction stays zero
    Eigen::VectorXd axis = solver.eigenvectors().col(col);
    Eigen::Index strongest;
    axis.cwiseAbs().maxCoeff(&strongest);
    if (axis(strongest) < 0.0) axis = -axis;
    out.points.col(k) = centered * axis;
    if (total > 0.0) out.variance_explained(k) = evals(col) / total;
  }
  return out;
}

void saveTemplate(const EmotionTemplate& tmpl, const std::filesystem::path& path) {
  tmpl.validate();
  Container c;
  c.putVector("psi_temp", tmpl.psi_temp);
  c.meta()["kind"] = "emotion_template";
  c.meta()["label"] = tmpl.label;
  c.meta()["n_valid_frames"] = tmpl.n_valid_frames;
  c.save(path);
}

EmotionTemplate loadTemplate(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  if (!c.meta().contains("kind") || c.meta()["kind"] != "emotion_template")
    throw SchemaError(path.string() + " is not an emotion template");
  EmotionTemplate out;
  try {
    out.label = c.meta().at("label").get<std::string>();
    out.n_valid_frames = c.meta().at("n_valid_frames").get<Eigen::Index>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  out.psi_temp = c.getVector("psi_temp");
  out.validate();
  return out;
}

void saveLabels(const std::vector<std::string>& labels, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const std::string& label : labels) j.push_back(label);
  atomicWriteFile(path, j.dump(2) + "\n");
}

std::vector<std::string> loadLabels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw SchemaError(path.string() + ": expected a JSON array of labels");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    if (!item.is_string())
      throw SchemaError(path.string() + ": labels must be strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace anim3d
