#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "anim3d/audio.hpp"
#include "anim3d/container.hpp"
#include "anim3d/emotion.hpp"
#include "anim3d/errors.hpp"
#include "anim3d/evaluation.hpp"
#include "anim3d/generator.hpp"
#include "anim3d/head_model.hpp"
#include "anim3d/lip_projection.hpp"
#include "anim3d/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace anim3d;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct SynthArgs {
  std::uint64_t seed = 1;
  int clips = 8;
  int frames = 100;
  int styles = 4;
  int vertices = 32;
  double fps = 25.0;
  std::string asset;
  std::string out;
};

void runSynthData(const SynthArgs& a) {
  const HeadAsset asset =
      a.asset.empty() ? generateToyAsset(a.seed, a.vertices) : loadAsset(a.asset);
  const auto data = makeSyntheticDataset(a.seed, a.clips, a.frames, asset, a.fps, a.styles);
  fs::create_directories(a.out);
  saveDataset(data, a.out);
  saveAsset(asset, fs::path(a.out) / "asset.anim3d");
  std::cout << "wrote " << data.size() << " clips to " << a.out << "\n";
}

void runValidate(const std::string& data_dir) {
  std::optional<HeadAsset> asset;
  const fs::path asset_path = fs::path(data_dir) / "asset.anim3d";
  if (fs::exists(asset_path)) {
    asset = loadAsset(asset_path);
    asset->validate();
  }
  const auto clips = loadDataset(data_dir);
  for (const ClipRecord& clip : clips) {
    clip.validate();
    if (asset)
      for (const FaceParams& frame : clip.frames)
        if (frame.psi.size() != asset->dPsi() || frame.beta.size() != asset->dBeta())
          throw ValidationError("clip " + clip.clip_id +
                                " parameter sizes do not match the asset");
  }
  std::cout << "ok: " << clips.size() << " clips" << (asset ? " and asset" : "") << " in "
            << data_dir << "\n";
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string asset;
  bool tiny = false;
  GeneratorConfig gen;
  TrainConfig tc;
};

/// Keys found in the file replace whatever the flags set.
void applyConfigFile(const fs::path& path, GeneratorConfig& gen, TrainConfig& tc) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw SchemaError(path.string() + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "stage1_steps")
        tc.stage1_steps = value.get<int>();
      else if (key == "stage2_steps")
        tc.stage2_steps = value.get<int>();
      else if (key == "batch1")
        tc.batch1 = value.get<int>();
      else if (key == "batch2")
        tc.batch2 = value.get<int>();
      else if (key == "lr")
        tc.lr = value.get<double>();
      else if (key == "lambda_reg")
        tc.lambda_reg = value.get<double>();
      else if (key == "lambda_mc")
        tc.lambda_mc = value.get<double>();
      else if (key == "lambda_pho")
        tc.lambda_pho = value.get<double>();
      else if (key == "lambda_emo")
        tc.lambda_emo = value.get<double>();
      else if (key == "T") {
        tc.T = value.get<int>();
        gen.T = tc.T;
      } else if (key == "seed")
        tc.seed = value.get<std::uint64_t>();
      else if (key == "squared_norms")
        tc.squared_norms = value.get<bool>();
      else if (key == "stage1_stop_fraction")
        tc.stage1_stop_fraction = value.get<double>();
      else if (key == "d_model")
        gen.d_model = value.get<int>();
      else if (key == "n_tsa_layers")
        gen.n_tsa_layers = value.get<int>();
      else if (key == "n_heads")
        gen.n_heads = value.get<int>();
      else if (key == "mlp_hidden")
        gen.mlp_hidden = value.get<int>();
      else if (key == "n_styles")
        gen.n_styles = value.get<int>();
      else if (key == "d_psi")
        gen.d_psi = value.get<int>();
      else if (key == "use_style")
        gen.use_style = value.get<bool>();
      else if (key == "model_seed")
        gen.seed = value.get<unsigned long>();
      else
        throw ConfigError("unknown config key '" + key + "' in " + path.string());
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path.string() + ": key '" + key + "': " + e.what());
    }
  }
}

HeadAsset assetForDataset(const std::string& explicit_path, const std::string& data_dir) {
  if (!explicit_path.empty()) return loadAsset(explicit_path);
  const fs::path fallback = fs::path(data_dir) / "asset.anim3d";
  if (!fs::exists(fallback))
    throw IoError("no --asset given and " + fallback.string() + " does not exist");
  return loadAsset(fallback);
}

void runTrain(TrainArgs& a) {
  if (a.tiny) {
    const GeneratorConfig defaults;
    GeneratorConfig tiny = GeneratorConfig::tiny();
    // Keep any dimensions the flags changed away from the stock defaults.
    if (a.gen.n_heads != defaults.n_heads) tiny.n_heads = a.gen.n_heads;
    if (a.gen.T != defaults.T) tiny.T = a.gen.T;
    if (a.gen.n_styles != defaults.n_styles) tiny.n_styles = a.gen.n_styles;
    if (a.gen.d_psi != defaults.d_psi) tiny.d_psi = a.gen.d_psi;
    tiny.use_style = a.gen.use_style;
    tiny.seed = a.gen.seed;
    a.gen = tiny;
  }
  if (!a.config.empty()) applyConfigFile(a.config, a.gen, a.tc);

  const HeadAsset asset = assetForDataset(a.asset, a.data);
  const auto dataset = loadDataset(a.data);
  a.gen.d_psi = static_cast<int>(asset.dPsi());

  const TrainResult result = train(a.gen, a.tc, dataset, asset);

  fs::create_directories(a.out);
  saveGenerator(result.weights, fs::path(a.out) / "checkpoint.anim3d");
  std::string csv;
  csv.reserve(result.history.size() * 24);
  char line[64];
  for (size_t i = 0; i < result.history.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.17g\n", i, result.history[i]);
    csv += line;
  }
  atomicWriteFile(fs::path(a.out) / "loss.csv", csv);
  std::cout << "trained " << result.history.size() << " steps, loss "
            << result.history.front() << " -> " << result.history.back() << ", checkpoint in "
            << a.out << "\n";
}

struct AnimateArgs {
  std::string audio;
  std::string ref;
  std::string checkpoint;
  std::string asset;
  std::string cameras;
  std::string out;
  int style = 0;
  double fps = 25.0;
};

std::vector<AudioWindow> logFloorPadded(const std::vector<AudioWindow>& windows, size_t begin,
                                        size_t count, int T) {
  std::vector<AudioWindow> chunk(windows.begin() + static_cast<std::ptrdiff_t>(begin),
                                 windows.begin() + static_cast<std::ptrdiff_t>(begin + count));
  AudioWindow floor_window;
  floor_window.values = Eigen::MatrixXd::Constant(kWindowRows, kNumMels, kLogMelFloor);
  while (chunk.size() < static_cast<size_t>(T)) chunk.push_back(floor_window);
  return chunk;
}

void runAnimate(const AnimateArgs& a) {
  const GeneratorWeights weights = loadGenerator(a.checkpoint);
  if (a.style < 0 || a.style >= weights.config.n_styles)
    throw ArgumentError("style id " + std::to_string(a.style) + " is outside [0, " +
                        std::to_string(weights.config.n_styles) + ")");
  const ParamsFile ref_file = loadParamsFile(a.ref);
  if (ref_file.frames.empty()) throw SchemaError(a.ref + " has no frames");
  const FaceParams& ref = ref_file.frames.front();

  const Waveform wave = resample(readWav(a.audio), kAudioRate);
  const auto n_frames = static_cast<Eigen::Index>(std::llround(wave.duration() * a.fps));
  if (n_frames < 1) throw ArgumentError("audio is too short for even one frame");
  const MelGram mel = melSpectrogram(wave);
  const std::vector<AudioWindow> windows = frameWindows(mel, a.fps, n_frames);

  const int T = weights.config.T;
  const StyleCode style = makeStyleCode(a.style, weights.config.n_styles);
  Eigen::MatrixXd psi(n_frames, weights.config.d_psi);
  Eigen::MatrixXd jaw(n_frames, 3);
  for (Eigen::Index start = 0; start < n_frames; start += T) {
    const auto count = static_cast<size_t>(std::min<Eigen::Index>(T, n_frames - start));
    const auto chunk = logFloorPadded(windows, static_cast<size_t>(start), count, T);
    const auto [chunk_psi, chunk_jaw] = generate(chunk, style, weights);
    psi.middleRows(start, static_cast<Eigen::Index>(count)) =
        chunk_psi.topRows(static_cast<Eigen::Index>(count));
    jaw.middleRows(start, static_cast<Eigen::Index>(count)) =
        chunk_jaw.topRows(static_cast<Eigen::Index>(count));
  }

  Eigen::MatrixXd cameras(n_frames, 3);
  if (a.cameras.empty()) {
    cameras.col(0).setOnes();
    cameras.col(1).setZero();
    cameras.col(2).setZero();
  } else {
    const Container c = Container::load(a.cameras);
    cameras = c.getMatrix("camera");
    if (cameras.rows() != n_frames || cameras.cols() != 3)
      throw SchemaError(a.cameras + ": camera array is " + std::to_string(cameras.rows()) + "x" +
                        std::to_string(cameras.cols()) + ", expected " +
                        std::to_string(n_frames) + "x3");
  }

  const std::vector<FaceParams> frames = assembleAnimation(ref, psi, jaw, cameras);
  fs::create_directories(a.out);
  saveParamsFile(frames, fs::path(a.out) / "animation.anim3d", a.fps);

  const HeadAsset asset = loadAsset(a.asset);
  char name[32];
  for (size_t t = 0; t < frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "frame_%06zu.obj", t);
    exportObj(evaluateMesh(asset, frames[t]), fs::path(a.out) / name);
  }
  std::cout << "wrote " << frames.size() << " frames to " << a.out << "\n";
}

struct SmoothArgs {
  std::string in;
  std::string out;
  double q = 1e-3;
  double r = 1e-2;
};

void runSmooth(const SmoothArgs& a) {
  const ParamsFile file = loadParamsFile(a.in);
  const auto T = static_cast<Eigen::Index>(file.frames.size());
  if (T < 2) throw ArgumentError(a.in + ": smoothing needs at least 2 frames");
  const SmootherConfig config{a.q, a.r};

  const auto stack = [T](auto getter, Eigen::Index dim) {
    Eigen::MatrixXd m(T, dim);
    for (Eigen::Index t = 0; t < T; ++t) m.row(t) = getter(t).transpose();
    return m;
  };
  const FaceParams& first = file.frames.front();
  std::vector<std::pair<Eigen::MatrixXd, int>> channels;
  const std::vector<FaceParams>& in = file.frames;
  Eigen::MatrixXd beta = kalmanSmooth(
      stack([&](Eigen::Index t) { return in[static_cast<size_t>(t)].beta; }, first.beta.size()),
      config);
  Eigen::MatrixXd theta = kalmanSmooth(
      stack([&](Eigen::Index t) { return in[static_cast<size_t>(t)].theta; }, first.theta.size()),
      config);
  Eigen::MatrixXd psi = kalmanSmooth(
      stack([&](Eigen::Index t) { return in[static_cast<size_t>(t)].psi; }, first.psi.size()),
      config);
  Eigen::MatrixXd albedo =
      kalmanSmooth(stack([&](Eigen::Index t) { return in[static_cast<size_t>(t)].albedo; },
                         first.albedo.size()),
                   config);
  Eigen::MatrixXd lighting =
      kalmanSmooth(stack([&](Eigen::Index t) { return in[static_cast<size_t>(t)].lighting; },
                         first.lighting.size()),
                   config);
  Eigen::MatrixXd camera = kalmanSmooth(
      stack([&](Eigen::Index t) { return Eigen::VectorXd(in[static_cast<size_t>(t)].camera); },
            3),
      config);

  std::vector<FaceParams> frames = file.frames;
  for (Eigen::Index t = 0; t < T; ++t) {
    FaceParams& f = frames[static_cast<size_t>(t)];
    f.beta = beta.row(t).transpose();
    f.theta = theta.row(t).transpose();
    f.psi = psi.row(t).transpose();
    f.albedo = albedo.row(t).transpose();
    f.lighting = lighting.row(t).transpose();
    f.camera = camera.row(t).transpose();
  }
  saveParamsFile(frames, a.out, file.fps);
  std::cout << "smoothed " << T << " frames into " << a.out << "\n";
}

struct EmotionArgs {
  std::string in;
  std::string template_path;
  std::string out;
  double intensity = 0.4;
};

void runEmotion(const EmotionArgs& a) {
  const ParamsFile file = loadParamsFile(a.in);
  const EmotionTemplate tmpl = loadTemplate(a.template_path);
  if (file.frames.empty()) throw SchemaError(a.in + " has no frames");
  const WeightVector w = makeWeight(a.intensity, file.frames.front().psi.size());
  std::vector<FaceParams> frames = file.frames;
  for (FaceParams& f : frames) f.psi = applyEmotion(f.psi, tmpl, w);
  saveParamsFile(frames, a.out, file.fps);
  std::cout << "applied '" << tmpl.label << "' at intensity " << a.intensity << " to "
            << frames.size() << " frames\n";
}

struct ExtractArgs {
  std::vector<std::string> params;
  std::vector<std::string> labels;
  std::string label;
  std::string out;
};

void runExtractTemplate(const ExtractArgs& a) {
  if (a.params.size() != a.labels.size())
    throw ArgumentError("got " + std::to_string(a.params.size()) + " --params for " +
                        std::to_string(a.labels.size()) + " --labels");
  std::vector<LabeledClip> clips;
  for (size_t i = 0; i < a.params.size(); ++i) {
    const ParamsFile file = loadParamsFile(a.params[i]);
    LabeledClip clip;
    clip.labels = loadLabels(a.labels[i]);
    const auto T = static_cast<Eigen::Index>(file.frames.size());
    if (T == 0) throw SchemaError(a.params[i] + " has no frames");
    clip.psi.resize(T, file.frames.front().psi.size());
    for (Eigen::Index t = 0; t < T; ++t)
      clip.psi.row(t) = file.frames[static_cast<size_t>(t)].psi.transpose();
    clips.push_back(std::move(clip));
  }
  const EmotionTemplate tmpl = extractTemplate(clips, a.label);
  saveTemplate(tmpl, a.out);
  std::cout << "template '" << tmpl.label << "' from " << tmpl.n_valid_frames
            << " valid frames written to " << a.out << "\n";
}

struct EvaluateArgs {
  std::string pred;
  std::string gt;
  std::string asset;
  std::string out;
  std::string clip_id;
};

void runEvaluate(const EvaluateArgs& a) {
  const HeadAsset asset = loadAsset(a.asset);
  const ParamsFile pred = loadParamsFile(a.pred);
  const ParamsFile gt = loadParamsFile(a.gt);
  if (pred.frames.size() != gt.frames.size())
    throw ArgumentError("frame count mismatch: " + std::to_string(pred.frames.size()) + " vs " +
                        std::to_string(gt.frames.size()));
  const VertexSequence pred_seq = vertexSequenceFromParams(asset, pred.frames);
  const VertexSequence gt_seq = vertexSequenceFromParams(asset, gt.frames);
  const MetricReport report =
      computeMetrics(pred_seq, gt_seq, lipVertexIds(asset), a.clip_id);
  atomicWriteFile(a.out, toJson(report).dump(2) + "\n");
  std::cout << renderMetricTable({report});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-driven 3D facial animation pipeline"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic training dataset");
  synth_cmd->add_option("--seed", synth.seed, "dataset seed")->envname("ANIM3D_SEED");
  synth_cmd->add_option("--clips", synth.clips, "number of clips");
  synth_cmd->add_option("--frames", synth.frames, "frames per clip");
  synth_cmd->add_option("--styles", synth.styles, "number of talking styles");
  synth_cmd->add_option("--vertices", synth.vertices, "toy asset vertex count");
  synth_cmd->add_option("--fps", synth.fps, "frame rate");
  synth_cmd->add_option("--asset", synth.asset, "use this head asset instead of a generated one");
  synth_cmd->add_option("--out", synth.out, "output dataset directory")->required();

  std::string validate_dir;
  auto* validate_cmd = app.add_subcommand("validate", "check every invariant of a dataset");
  validate_cmd->add_option("--data", validate_dir, "dataset directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "run two-stage training");
  train_cmd->add_option("--data", train_args.data, "dataset directory")->required();
  train_cmd->add_option("--out", train_args.out, "output directory")->required();
  train_cmd->add_option("--config", train_args.config,
                        "JSON config file; its keys override the flags");
  train_cmd->add_option("--asset", train_args.asset, "head asset (default: <data>/asset.anim3d)");
  train_cmd->add_flag("--tiny", train_args.tiny, "use the desk-scale model preset");
  train_cmd->add_option("--stage1-steps", train_args.tc.stage1_steps, "stage 1 step count");
  train_cmd->add_option("--stage2-steps", train_args.tc.stage2_steps,
                        "stage 2 step count (0 skips stage 2)");
  train_cmd->add_option("--batch1", train_args.tc.batch1, "stage 1 batch size");
  train_cmd->add_option("--batch2", train_args.tc.batch2, "stage 2 batch size");
  train_cmd->add_option("--lr", train_args.tc.lr, "Adam learning rate");
  train_cmd->add_option("--lambda-reg", train_args.tc.lambda_reg, "regression loss weight");
  train_cmd->add_option("--lambda-mc", train_args.tc.lambda_mc, "mouth-closure loss weight");
  train_cmd->add_option("--stop-fraction", train_args.tc.stage1_stop_fraction,
                        "end stage 1 early once the loss falls below this fraction of its "
                        "initial value (0 disables)");
  train_cmd->add_option("--seed", train_args.tc.seed, "training seed")->envname("ANIM3D_SEED");
  train_cmd->add_option("--model-seed", train_args.gen.seed, "weight initialization seed");
  train_cmd->add_option("--d-model", train_args.gen.d_model, "model width");
  train_cmd->add_option("--layers", train_args.gen.n_tsa_layers, "attention layer count");
  train_cmd->add_option("--heads", train_args.gen.n_heads, "attention head count");
  train_cmd->add_option("--mlp-hidden", train_args.gen.mlp_hidden, "feed-forward width");
  train_cmd->add_option("--styles", train_args.gen.n_styles, "style table size");

  AnimateArgs animate;
  auto* animate_cmd = app.add_subcommand("animate", "drive a face from a wav file");
  animate_cmd->add_option("--audio", animate.audio, "input wav")->required();
  animate_cmd->add_option("--ref", animate.ref, "reference params file (frame 0 is the identity)")
      ->required();
  animate_cmd->add_option("--checkpoint", animate.checkpoint, "trained model")->required();
  animate_cmd->add_option("--asset", animate.asset, "head asset used for the mesh export")
      ->required();
  animate_cmd->add_option("--style", animate.style, "style id");
  animate_cmd->add_option("--fps", animate.fps, "output frame rate");
  animate_cmd->add_option("--cameras", animate.cameras,
                          "container with a [n_frames, 3] 'camera' array (default camera is "
                          "(1, 0, 0) per frame)");
  animate_cmd->add_option("--out", animate.out, "output directory")->required();

  SmoothArgs smooth;
  auto* smooth_cmd = app.add_subcommand("smooth", "Kalman-smooth a params file");
  smooth_cmd->add_option("--in", smooth.in, "input params file")->required();
  smooth_cmd->add_option("--q", smooth.q, "process noise");
  smooth_cmd->add_option("--r", smooth.r, "observation noise");
  smooth_cmd->add_option("--out", smooth.out, "output params file")->required();

  EmotionArgs emotion;
  auto* emotion_cmd = app.add_subcommand("emotion", "blend an emotion template into a params file");
  emotion_cmd->add_option("--in", emotion.in, "input params file")->required();
  emotion_cmd->add_option("--template", emotion.template_path, "emotion template file")
      ->required();
  emotion_cmd->add_option("--intensity", emotion.intensity, "blend weight in [0, 1]");
  emotion_cmd->add_option("--out", emotion.out, "output params file")->required();

  ExtractArgs extract;
  auto* extract_cmd =
      app.add_subcommand("extract-template", "average labeled frames into an emotion template");
  extract_cmd->add_option("--params", extract.params, "params file (repeatable)")->required();
  extract_cmd->add_option("--labels", extract.labels, "per-frame label sidecar (repeatable)")
      ->required();
  extract_cmd->add_option("--label", extract.label, "target emotion")->required();
  extract_cmd->add_option("--out", extract.out, "output template file")->required();

  EvaluateArgs evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "compute metrics between two params files");
  evaluate_cmd->add_option("--pred", evaluate.pred, "predicted params file")->required();
  evaluate_cmd->add_option("--gt", evaluate.gt, "ground-truth params file")->required();
  evaluate_cmd->add_option("--asset", evaluate.asset, "head asset")->required();
  evaluate_cmd->add_option("--out", evaluate.out, "output JSON report")->required();
  evaluate_cmd->add_option("--clip-id", evaluate.clip_id, "clip id recorded in the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) runSynthData(synth);
    if (validate_cmd->parsed()) runValidate(validate_dir);
    if (train_cmd->parsed()) runTrain(train_args);
    if (animate_cmd->parsed()) runAnimate(animate);
    if (smooth_cmd->parsed()) runSmooth(smooth);
    if (emotion_cmd->parsed()) runEmotion(emotion);
    if (extract_cmd->parsed()) runExtractTemplate(extract);
    if (evaluate_cmd->parsed()) runEvaluate(evaluate);
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
