#include "anim3d/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>

#include "anim3d/container.hpp"
#include "anim3d/errors.hpp"
#include "anim3d/lip_projection.hpp"
#include "anim3d/optim.hpp"
#include "anim3d/rng.hpp"
#include "json.hpp"

namespace anim3d {

namespace {

void requireSameDims(const char* what, Eigen::Index got, Eigen::Index want) {
  if (got != want)
    throw ArgumentError(std::string(what) + ": got " + std::to_string(got) + " entries, expected " +
                        std::to_string(want));
}

Eigen::MatrixXd flattenLips(const std::vector<Eigen::MatrixXd>& lips, Eigen::Index n_l) {
  const auto t_count = static_cast<Eigen::Index>(lips.size());
  Eigen::MatrixXd flat(t_count, 2 * n_l);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const Eigen::MatrixXd& lm = lips[static_cast<size_t>(t)];
    if (lm.rows() != n_l || lm.cols() != 2)
      throw ArgumentError("lip landmarks frame " + std::to_string(t) + " is " +
                          std::to_string(lm.rows()) + "x" + std::to_string(lm.cols()) +
                          ", expected " + std::to_string(n_l) + "x2");
    for (Eigen::Index l = 0; l < n_l; ++l) {
      flat(t, 2 * l) = lm(l, 0);
      flat(t, 2 * l + 1) = lm(l, 1);
    }
  }
  return flat;
}

}  // namespace

void ClipRecord::validate() const {
  if (frames.empty()) throw ValidationError("clip " + clip_id + " has no frames");
  if (fps <= 0) throw ValidationError("clip " + clip_id + " has non-positive fps");
  if (style_id < 0 || identity_id < 0)
    throw ValidationError("clip " + clip_id + " has a negative id");
  const FaceParams& first = frames.front();
  for (size_t t = 0; t < frames.size(); ++t) {
    const FaceParams& f = frames[t];
    if (f.beta.size() != first.beta.size() || f.psi.size() != first.psi.size() ||
        f.albedo.size() != first.albedo.size())
      throw ValidationError("clip " + clip_id + " frame " + std::to_string(t) +
                            " has inconsistent parameter dimensions");
    try {
      f.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("clip " + clip_id + " frame " + std::to_string(t) + ": " + e.what());
    }
  }
  if (!audio.samples.allFinite() || audio.sample_rate <= 0)
    throw ValidationError("clip " + clip_id + " has a malformed waveform");
  if (gt_lip_2d) {
    if (gt_lip_2d->size() != frames.size())
      throw ValidationError("clip " + clip_id + " has " + std::to_string(gt_lip_2d->size()) +
                            " lip frames for " + std::to_string(frames.size()) + " video frames");
    const Eigen::Index n_l = gt_lip_2d->front().rows();
    for (size_t t = 0; t < gt_lip_2d->size(); ++t) {
      const Eigen::MatrixXd& lm = (*gt_lip_2d)[t];
      if (lm.rows() != n_l || lm.cols() != 2)
        throw ValidationError("clip " + clip_id + " lip frame " + std::to_string(t) +
                              " is not a consistent Lx2 array");
      if (!lm.allFinite())
        throw ValidationError("clip " + clip_id + " lip frame " + std::to_string(t) +
                              " contains non-finite entries");
    }
  }
}

void TrainConfig::validate() const {
  if (stage1_steps < 1) throw ConfigError("stage1_steps must be positive");
  if (stage2_steps < 0) throw ConfigError("stage2_steps must be non-negative");
  if (batch1 < 1 || batch2 < 1) throw ConfigError("batch sizes must be positive");
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (T < 1) throw ConfigError("T must be positive");
  if (lambda_reg < 0 || lambda_mc < 0) throw ConfigError("loss weights must be non-negative");
  if (lambda_pho != 0)
    throw ConfigError("the photometric loss term is not implemented; lambda_pho must be 0");
  if (lambda_emo != 0)
    throw ConfigError("the emotion loss term is not implemented; lambda_emo must be 0");
  if (stage1_stop_fraction < 0 || stage1_stop_fraction >= 1)
    throw ConfigError("stage1_stop_fraction must be in [0, 1)");
}

double lossReg(const Eigen::MatrixXd& psi_pred, const Eigen::MatrixXd& psi_gt,
               const Eigen::MatrixXd& jaw_pred, const Eigen::MatrixXd& jaw_gt, bool squared) {
  if (psi_pred.rows() != psi_gt.rows() || psi_pred.cols() != psi_gt.cols())
    throw ArgumentError("lossReg: psi shapes " + std::to_string(psi_pred.rows()) + "x" +
                        std::to_string(psi_pred.cols()) + " and " + std::to_string(psi_gt.rows()) +
                        "x" + std::to_string(psi_gt.cols()) + " differ");
  if (jaw_pred.rows() != jaw_gt.rows() || jaw_pred.cols() != 3 || jaw_gt.cols() != 3)
    throw ArgumentError("lossReg: jaw sequences must both be Tx3");
  if (psi_pred.rows() != jaw_pred.rows())
    throw ArgumentError("lossReg: psi and jaw cover different frame counts");
  double total = 0.0;
  for (Eigen::Index t = 0; t < psi_pred.rows(); ++t) {
    const double ne = (psi_pred.row(t) - psi_gt.row(t)).norm();
    const double nj = (jaw_pred.row(t) - jaw_gt.row(t)).norm();
    total += squared ? ne * ne + nj * nj : ne + nj;
  }
  return total;
}

double lossMc(const HeadAsset& asset, const std::vector<FaceParams>& params_pred,
              const std::vector<Eigen::MatrixXd>& gt_lip_2d) {
  if (params_pred.empty()) throw ArgumentError("lossMc: no frames");
  if (params_pred.size() != gt_lip_2d.size())
    throw ArgumentError("lossMc: " + std::to_string(params_pred.size()) + " frames but " +
                        std::to_string(gt_lip_2d.size()) + " landmark frames");
  double total = 0.0;
  for (size_t t = 0; t < params_pred.size(); ++t) {
    const Eigen::MatrixXd pred = projectWeakPerspective(
        lipLandmarks3d(asset, evaluateMesh(asset, params_pred[t])), params_pred[t].camera);
    const Eigen::MatrixXd& gt = gt_lip_2d[t];
    if (gt.rows() != pred.rows() || gt.cols() != 2)
      throw ArgumentError("lossMc: landmark frame " + std::to_string(t) + " is " +
                          std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()) +
                          ", expected " + std::to_string(pred.rows()) + "x2");
    total += (pred - gt).cwiseAbs().sum();
  }
  return total;
}

double totalLoss(double l_reg, double l_mc, double lambda_reg, double lambda_mc,
                 double lambda_pho, double lambda_emo) {
  if (lambda_reg < 0 || lambda_mc < 0 || lambda_pho < 0 || lambda_emo < 0)
    throw ArgumentError("totalLoss: loss weights must be non-negative");
  if (lambda_pho != 0)
    throw ConfigError("the photometric loss term is not implemented; lambda_pho must be 0");
  if (lambda_emo != 0)
    throw ConfigError("the emotion loss term is not implemented; lambda_emo must be 0");
  return lambda_reg * l_reg + lambda_mc * l_mc;
}

ad::Tensor lossRegGraph(const ad::Tensor& psi_pred, const Eigen::MatrixXd& psi_gt,
                        const ad::Tensor& jaw_pred, const Eigen::MatrixXd& jaw_gt, bool squared) {
  if (psi_pred->shape.size() != 2 || psi_pred->rows() != psi_gt.rows() ||
      psi_pred->cols() != psi_gt.cols())
    throw ArgumentError("lossRegGraph: psi prediction " + ad::shapeStr(psi_pred->shape) +
                        " does not match ground truth " + std::to_string(psi_gt.rows()) + "x" +
                        std::to_string(psi_gt.cols()));
  if (jaw_pred->shape.size() != 2 || jaw_pred->rows() != jaw_gt.rows() || jaw_pred->cols() != 3 ||
      jaw_gt.cols() != 3)
    throw ArgumentError("lossRegGraph: jaw sequences must both be Tx3");
  const ad::Tensor de = ad::sub(psi_pred, ad::constant(psi_gt));
  const ad::Tensor dj = ad::sub(jaw_pred, ad::constant(jaw_gt));
  if (squared) return ad::add(ad::sum(ad::mul(de, de)), ad::sum(ad::mul(dj, dj)));
  return ad::add(ad::sum(ad::l2PerRow(de)), ad::sum(ad::l2PerRow(dj)));
}

ad::Tensor lossMcGraph(const HeadAsset& asset, const std::vector<FaceParams>& base_frames,
                       const ad::Tensor& psi_pred, const ad::Tensor& jaw_pred,
                       const std::vector<Eigen::MatrixXd>& gt_lip_2d) {
  if (gt_lip_2d.size() != base_frames.size())
    throw ArgumentError("lossMcGraph: " + std::to_string(base_frames.size()) + " frames but " +
                        std::to_string(gt_lip_2d.size()) + " landmark frames");
  const Eigen::MatrixXd gt = flattenLips(gt_lip_2d, asset.numLandmarks());
  const ad::Tensor pred = projectedLipsGraph(asset, base_frames, psi_pred, jaw_pred);
  return ad::l1(ad::sub(pred, ad::constant(gt)));
}

std::vector<ClipRecord> makeSyntheticDataset(std::uint64_t seed, int n_clips, int n_frames,
                                             const HeadAsset& asset, double fps, int n_styles) {
  if (n_clips < 1 || n_frames < 1) throw ArgumentError("dataset sizes must be positive");
  if (fps <= 0) throw ArgumentError("fps must be positive");
  if (n_styles < 1) throw ArgumentError("n_styles must be positive");
  asset.validate();
  Rng rng(seed ^ 0x64617461ull);

  // Per-style expression endpoints; the activity envelope interpolates
  // between them, so the audio level determines the expression given the
  // style. Endpoints sit close together around a style-specific center:
  // most of the target is a per-style constant, with a smaller
  // envelope-driven excursion on top.
  const Eigen::Index d_psi = asset.dPsi();
  std::vector<Eigen::VectorXd> active(static_cast<size_t>(n_styles));
  std::vector<Eigen::VectorXd> resting(static_cast<size_t>(n_styles));
  for (int s = 0; s < n_styles; ++s) {
    active[static_cast<size_t>(s)] = 2.5 * rng.gaussianVector(d_psi);
    resting[static_cast<size_t>(s)] =
        active[static_cast<size_t>(s)] - 0.1 * rng.gaussianVector(d_psi);
  }

  std::vector<ClipRecord> out;
  out.reserve(static_cast<size_t>(n_clips));
  for (int c = 0; c < n_clips; ++c) {
    ClipRecord clip;
    clip.fps = fps;
    clip.style_id = c % n_styles;
    clip.identity_id = c;
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03d", c);
    clip.clip_id = name;

    const Eigen::VectorXd beta = 0.3 * rng.gaussianVector(asset.dBeta());
    const Eigen::Vector3d camera(1.0 + 0.4 * rng.uniform(), rng.uniform(-0.2, 0.2),
                                 rng.uniform(-0.2, 0.2));

    // Low-pass filtered noise, min-max normalized to [0, 1] per clip. The
    // time constant is kept long relative to the 0.2 s audio window so the
    // activity level is nearly constant within any one window.
    Eigen::VectorXd env(n_frames);
    double y = 0.0;
    for (int t = 0; t < n_frames; ++t) {
      y = 0.96 * y + 0.04 * rng.gaussian();
      env(t) = y;
    }
    const double lo = env.minCoeff(), hi = env.maxCoeff();
    if (hi - lo > 1e-9)
      env = (env.array() - lo) / (hi - lo);
    else
      env.setConstant(0.5);

    const auto& u = active[static_cast<size_t>(clip.style_id)];
    const auto& w = resting[static_cast<size_t>(clip.style_id)];
    clip.frames.reserve(static_cast<size_t>(n_frames));
    for (int t = 0; t < n_frames; ++t) {
      FaceParams p = FaceParams::zero(asset.dBeta(), d_psi);
      p.beta = beta;
      p.psi = env(t) * u + (1.0 - env(t)) * w;
      p.setJaw(Eigen::Vector3d(0.15 * env(t), 0.0, 0.0));
      p.camera = camera;
      clip.frames.push_back(std::move(p));
    }

    // Sinusoid mixture whose amplitude follows the same envelope, giving the
    // documented positive loudness/jaw correlation.
    const double f0 = 180.0 + 65.0 * clip.style_id;
    const std::array<double, 3> freqs = {f0, 2.3 * f0, 3.7 * f0};
    const std::array<double, 3> mix = {0.5, 0.3, 0.2};
    std::array<double, 3> phase;
    for (auto& ph : phase) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const auto n_samples = static_cast<Eigen::Index>(std::llround(n_frames / fps * kAudioRate));
    clip.audio.sample_rate = kAudioRate;
    clip.audio.samples.resize(n_samples);
    for (Eigen::Index i = 0; i < n_samples; ++i) {
      const double tau = static_cast<double>(i) / kAudioRate;
      const double pos = std::min(tau * fps, static_cast<double>(n_frames - 1));
      const int t0 = static_cast<int>(pos);
      const int t1 = std::min(t0 + 1, n_frames - 1);
      const double e = env(t0) + (pos - t0) * (env(t1) - env(t0));
      double tone = 0.0;
      for (int j = 0; j < 3; ++j) tone += mix[j] * std::sin(2.0 * std::numbers::pi * freqs[j] * tau + phase[j]);
      // Exponential loudness keeps the log-mel energy linear in the
      // envelope, so the envelope is recoverable by a linear readout.
      clip.audio.samples(i) = 0.12 * std::exp(1.8 * e) * tone;
    }

    std::vector<Eigen::MatrixXd> lips;
    lips.reserve(static_cast<size_t>(n_frames));
    for (const FaceParams& p : clip.frames)
      lips.push_back(
          projectWeakPerspective(lipLandmarks3d(asset, evaluateMesh(asset, p)), p.camera));
    clip.gt_lip_2d = std::move(lips);

    clip.validate();
    out.push_back(std::move(clip));
  }
  return out;
}

TrainResult train(const GeneratorConfig& gen_config, const TrainConfig& train_config,
                  const std::vector<ClipRecord>& dataset, const HeadAsset& asset) {
  gen_config.validate();
  train_config.validate();
  asset.validate();
  if (dataset.empty()) throw ArgumentError("train: empty dataset");
  if (gen_config.T != train_config.T)
    throw ConfigError("generator T " + std::to_string(gen_config.T) +
                      " does not match training T " + std::to_string(train_config.T));
  if (gen_config.d_psi != asset.dPsi())
    throw ConfigError("generator d_psi " + std::to_string(gen_config.d_psi) +
                      " does not match asset expression dimension " +
                      std::to_string(asset.dPsi()));
  const bool needs_mc = train_config.stage2_steps > 0 && train_config.lambda_mc > 0;
  const int T = train_config.T;
  const auto n_clips = dataset.size();
  for (const ClipRecord& clip : dataset) {
    clip.validate();
    if (clip.numFrames() < T)
      throw ArgumentError("clip " + clip.clip_id + " has " + std::to_string(clip.numFrames()) +
                          " frames, shorter than the segment length " + std::to_string(T));
    if (clip.frames.front().psi.size() != gen_config.d_psi)
      throw ConfigError("clip " + clip.clip_id + " expression dimension does not match the model");
    if (clip.style_id >= gen_config.n_styles)
      throw ConfigError("clip " + clip.clip_id + " style id " + std::to_string(clip.style_id) +
                        " is outside the model's " + std::to_string(gen_config.n_styles) +
                        " styles");
    if (needs_mc && !clip.gt_lip_2d)
      throw ConfigError("clip " + clip.clip_id +
                        " is missing gt_lip_2d, required by the mouth-closure stage");
  }

  // Per-clip ground-truth matrices and audio windows, computed once.
  struct Prepared {
    std::vector<AudioWindow> windows;
    Eigen::MatrixXd psi_gt;  // n x d_psi
    Eigen::MatrixXd jaw_gt;  // n x 3
  };
  std::vector<Prepared> prep(n_clips);
  for (size_t c = 0; c < n_clips; ++c) {
    const ClipRecord& clip = dataset[c];
    const MelGram mel = melSpectrogram(resample(clip.audio, kAudioRate));
    prep[c].windows = frameWindows(mel, clip.fps, clip.numFrames());
    prep[c].psi_gt.resize(clip.numFrames(), gen_config.d_psi);
    prep[c].jaw_gt.resize(clip.numFrames(), 3);
    for (Eigen::Index t = 0; t < clip.numFrames(); ++t) {
      prep[c].psi_gt.row(t) = clip.frames[static_cast<size_t>(t)].psi.transpose();
      prep[c].jaw_gt.row(t) = clip.frames[static_cast<size_t>(t)].jaw().transpose();
    }
  }

  TrainResult result;
  result.weights = initGenerator(gen_config);
  const std::vector<ad::Tensor> params = result.weights.parameters();
  ad::AdamState opt;
  opt.lr = train_config.lr;

  Rng rng(train_config.seed ^ 0x7472616eull);
  std::vector<size_t> order(n_clips);
  for (size_t i = 0; i < n_clips; ++i) order[i] = i;
  size_t cursor = n_clips;  // forces a shuffle before the first draw
  auto nextClip = [&]() {
    if (cursor >= order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  auto runStage = [&](int stage, int steps, int batch_requested, double w_reg, double w_mc,
                      double stop_fraction) {
    if (steps == 0) return;
    const int batch = std::min<int>(batch_requested, static_cast<int>(n_clips));
    if (batch < batch_requested)
      std::cerr << "warning: stage " << stage << " batch size " << batch_requested
                << " clamped to the " << n_clips << "-clip dataset\n";
    double initial = -1.0;
    for (int step = 0; step < steps; ++step) {
      std::vector<AudioWindow> wins;
      wins.reserve(static_cast<size_t>(batch) * static_cast<size_t>(T));
      std::vector<StyleCode> styles;
      std::vector<size_t> clip_ids(static_cast<size_t>(batch));
      std::vector<Eigen::Index> starts(static_cast<size_t>(batch));
      for (int b = 0; b < batch; ++b) {
        const size_t c = nextClip();
        const ClipRecord& clip = dataset[c];
        const auto start = static_cast<Eigen::Index>(
            rng.integer(static_cast<std::uint64_t>(clip.numFrames() - T + 1)));
        clip_ids[static_cast<size_t>(b)] = c;
        starts[static_cast<size_t>(b)] = start;
        for (int t = 0; t < T; ++t)
          wins.push_back(prep[c].windows[static_cast<size_t>(start + t)]);
        styles.push_back(makeStyleCode(clip.style_id, gen_config.n_styles));
      }

      const GeneratorOutput out =
          generateBatchGraph(windowBatchTensor(wins), styles, result.weights);
      ad::Tensor loss;
      for (int b = 0; b < batch; ++b) {
        const size_t c = clip_ids[static_cast<size_t>(b)];
        const Eigen::Index start = starts[static_cast<size_t>(b)];
        const ad::Tensor psi_b = batch == 1 ? out.psi : ad::slice(out.psi, 0, b * T, T);
        const ad::Tensor jaw_b = batch == 1 ? out.jaw : ad::slice(out.jaw, 0, b * T, T);
        ad::Tensor term =
            ad::scale(lossRegGraph(psi_b, prep[c].psi_gt.middleRows(start, T), jaw_b,
                                   prep[c].jaw_gt.middleRows(start, T),
                                   train_config.squared_norms),
                      w_reg);
        if (w_mc > 0) {
          const ClipRecord& clip = dataset[c];
          const std::vector<FaceParams> base(clip.frames.begin() + start,
                                             clip.frames.begin() + start + T);
          const std::vector<Eigen::MatrixXd> gt(clip.gt_lip_2d->begin() + start,
                                                clip.gt_lip_2d->begin() + start + T);
          term = ad::add(term, ad::scale(lossMcGraph(asset, base, psi_b, jaw_b, gt), w_mc));
        }
        loss = loss ? ad::add(loss, term) : term;
      }
      loss = ad::scale(loss, 1.0 / batch);
      ad::backward(loss);
      ad::adamStep(opt, params);

      const double value = loss->value(0);
      result.history.push_back(value);
      if (initial < 0) initial = value;
      if (stop_fraction > 0 && value < stop_fraction * initial) break;
    }
  };

  runStage(1, train_config.stage1_steps, train_config.batch1, train_config.lambda_reg, 0.0,
           train_config.stage1_stop_fraction);
  runStage(2, train_config.stage2_steps, train_config.batch2, train_config.lambda_reg,
           train_config.lambda_mc, 0.0);
  return result;
}

// ---- file formats ----

void saveParamsFile(const std::vector<FaceParams>& frames, const std::filesystem::path& path,
                    double fps) {
  if (frames.empty()) throw ArgumentError("saveParamsFile: no frames");
  const auto n = static_cast<Eigen::Index>(frames.size());
  const FaceParams& first = frames.front();
  Eigen::MatrixXd beta(n, first.beta.size()), theta(n, kPoseDim), psi(n, first.psi.size()),
      albedo(n, first.albedo.size()), lighting(n, 27), camera(n, 3);
  for (Eigen::Index t = 0; t < n; ++t) {
    const FaceParams& f = frames[static_cast<size_t>(t)];
    if (f.beta.size() != first.beta.size() || f.psi.size() != first.psi.size() ||
        f.albedo.size() != first.albedo.size())
      throw ArgumentError("saveParamsFile: frame " + std::to_string(t) +
                          " has inconsistent parameter dimensions");
    f.validate();
    beta.row(t) = f.beta.transpose();
    theta.row(t) = f.theta.transpose();
    psi.row(t) = f.psi.transpose();
    albedo.row(t) = f.albedo.transpose();
    lighting.row(t) = f.lighting.transpose();
    camera.row(t) = f.camera.transpose();
  }
  Container c;
  c.putMatrix("beta", beta);
  c.putMatrix("theta", theta);
  c.putMatrix("psi", psi);
  c.putMatrix("albedo", albedo);
  c.putMatrix("lighting", lighting);
  c.putMatrix("camera", camera);
  c.meta()["kind"] = "face_params";
  c.meta()["n_frames"] = n;
  if (fps > 0) c.meta()["fps"] = fps;
  c.save(path);
}

ParamsFile loadParamsFile(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  if (!c.meta().contains("kind") || c.meta()["kind"] != "face_params")
    throw SchemaError(path.string() + " is not a face-parameter file");
  const Eigen::MatrixXd beta = c.getMatrix("beta");
  const Eigen::MatrixXd theta = c.getMatrix("theta");
  const Eigen::MatrixXd psi = c.getMatrix("psi");
  const Eigen::MatrixXd albedo = c.getMatrix("albedo");
  const Eigen::MatrixXd lighting = c.getMatrix("lighting");
  const Eigen::MatrixXd camera = c.getMatrix("camera");
  const Eigen::Index n = beta.rows();
  if (theta.rows() != n || psi.rows() != n || albedo.rows() != n || lighting.rows() != n ||
      camera.rows() != n)
    throw SchemaError(path.string() + ": parameter arrays cover different frame counts");
  if (theta.cols() != kPoseDim)
    throw SchemaError(path.string() + ": theta must have " + std::to_string(kPoseDim) +
                      " columns");
  if (lighting.cols() != 27) throw SchemaError(path.string() + ": lighting must have 27 columns");
  if (camera.cols() != 3) throw SchemaError(path.string() + ": camera must have 3 columns");

  ParamsFile out;
  if (c.meta().contains("fps")) out.fps = c.meta()["fps"].get<double>();
  out.frames.reserve(static_cast<size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    FaceParams f;
    f.beta = beta.row(t).transpose();
    f.theta = theta.row(t).transpose();
    f.psi = psi.row(t).transpose();
    f.albedo = albedo.row(t).transpose();
    f.lighting = lighting.row(t).transpose();
    f.camera = camera.row(t).transpose();
    f.validate();
    out.frames.push_back(std::move(f));
  }
  return out;
}

void saveClip(const ClipRecord& clip, const std::filesystem::path& dir) {
  clip.validate();
  std::filesystem::create_directories(dir);
  saveParamsFile(clip.frames, dir / "params.anim3d", clip.fps);
  writeWav(clip.audio, dir / "audio.wav");
  if (clip.gt_lip_2d) {
    const auto& lips = *clip.gt_lip_2d;
    const auto t_count = static_cast<Eigen::Index>(lips.size());
    const Eigen::Index n_l = lips.front().rows();
    Eigen::VectorXd flat(t_count * n_l * 2);
    for (Eigen::Index t = 0; t < t_count; ++t)
      for (Eigen::Index l = 0; l < n_l; ++l) {
        flat(t * n_l * 2 + 2 * l) = lips[static_cast<size_t>(t)](l, 0);
        flat(t * n_l * 2 + 2 * l + 1) = lips[static_cast<size_t>(t)](l, 1);
      }
    Container c;
    c.putArray("lip2d", {t_count, n_l, 2}, std::move(flat));
    c.meta()["kind"] = "lip2d";
    c.save(dir / "lip2d.anim3d");
  }
  nlohmann::json manifest;
  manifest["fps"] = clip.fps;
  manifest["style_id"] = clip.style_id;
  manifest["identity_id"] = clip.identity_id;
  manifest["clip_id"] = clip.clip_id;
  atomicWriteFile(dir / "manifest.json", manifest.dump(2) + "\n");
}

ClipRecord loadClip(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(manifest_path.string() + ": " + e.what());
  }

  ClipRecord clip;
  try {
    clip.fps = manifest.at("fps").get<double>();
    clip.style_id = manifest.at("style_id").get<int>();
    clip.identity_id = manifest.at("identity_id").get<int>();
    clip.clip_id = manifest.at("clip_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(manifest_path.string() + ": " + e.what());
  }
  clip.frames = loadParamsFile(dir / "params.anim3d").frames;
  clip.audio = readWav(dir / "audio.wav");

  const auto lip_path = dir / "lip2d.anim3d";
  if (std::filesystem::exists(lip_path)) {
    const Container c = Container::load(lip_path);
    if (!c.meta().contains("kind") || c.meta()["kind"] != "lip2d")
      throw SchemaError(lip_path.string() + " is not a lip-landmark file");
    const auto& shape = c.shape("lip2d");
    if (shape.size() != 3 || shape[2] != 2)
      throw SchemaError(lip_path.string() + ": lip2d must be T x L x 2");
    const Eigen::VectorXd& flat = c.getFlat("lip2d");
    std::vector<Eigen::MatrixXd> lips;
    lips.reserve(static_cast<size_t>(shape[0]));
    for (Eigen::Index t = 0; t < shape[0]; ++t) {
      Eigen::MatrixXd lm(shape[1], 2);
      for (Eigen::Index l = 0; l < shape[1]; ++l) {
        lm(l, 0) = flat(t * shape[1] * 2 + 2 * l);
        lm(l, 1) = flat(t * shape[1] * 2 + 2 * l + 1);
      }
      lips.push_back(std::move(lm));
    }
    clip.gt_lip_2d = std::move(lips);
  }
  clip.validate();
  return clip;
}

void saveDataset(const std::vector<ClipRecord>& clips, const std::filesystem::path& dir) {
  if (clips.empty()) throw ArgumentError("saveDataset: no clips");
  std::filesystem::create_directories(dir);
  for (const ClipRecord& clip : clips) {
    if (clip.clip_id.empty()) throw ArgumentError("saveDataset: clip without an id");
    saveClip(clip, dir / clip.clip_id);
  }
}

std::vector<ClipRecord> loadDataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> clip_dirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json"))
      clip_dirs.push_back(entry.path());
  std::sort(clip_dirs.begin(), clip_dirs.end());
  if (clip_dirs.empty()) throw SchemaError(dir.string() + " contains no clip directories");
  std::vector<ClipRecord> out;
  out.reserve(clip_dirs.size());
  for (const auto& d : clip_dirs) out.push_back(loadClip(d));
  return out;
}

}  // namespace anim3d
