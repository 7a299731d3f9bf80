#include "anim3d/generator.hpp"

#include <cmath>
#include <string>

#include "anim3d/container.hpp"
#include "anim3d/errors.hpp"
#include "anim3d/rng.hpp"

namespace anim3d {

namespace ad = anim3d::ad;

void StyleCode::validate() const {
  if (style_id < 0 || style_id >= one_hot.size())
    throw ValidationError("StyleCode: style_id " + std::to_string(style_id) +
                          " outside [0, " + std::to_string(one_hot.size()) + ")");
  for (Eigen::Index i = 0; i < one_hot.size(); ++i) {
    const double want = i == style_id ? 1.0 : 0.0;
    if (one_hot(i) != want)
      throw ValidationError("StyleCode: one_hot must be exactly one 1 at style_id");
  }
}

StyleCode makeStyleCode(int style_id, int n_styles) {
  if (n_styles < 1) throw ArgumentError("makeStyleCode: style count must be positive");
  if (style_id < 0 || style_id >= n_styles)
    throw ArgumentError("makeStyleCode: id " + std::to_string(style_id) + " outside [0, " +
                        std::to_string(n_styles) + ")");
  StyleCode s;
  s.style_id = style_id;
  s.one_hot = Eigen::VectorXd::Zero(n_styles);
  s.one_hot(style_id) = 1.0;
  return s;
}

GeneratorConfig GeneratorConfig::tiny() {
  GeneratorConfig c;
  c.d_model = 64;
  c.n_tsa_layers = 2;
  c.n_heads = 4;
  c.mlp_hidden = 128;
  return c;
}

void GeneratorConfig::validate() const {
  if (d_model < 16 || n_tsa_layers < 1 || n_heads < 1 || mlp_hidden < 1 || T < 1 ||
      n_styles < 1 || d_psi < 1)
    throw ConfigError("GeneratorConfig: all sizes must be positive (d_model >= 16)");
  if (d_model % n_heads != 0)
    throw ConfigError("GeneratorConfig: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  if (d_model % 16 != 0)
    throw ConfigError("GeneratorConfig: d_model must be divisible by 16 for the conv stack");
}

namespace {

ad::Tensor heUniform(Rng& rng, std::vector<Eigen::Index> shape, Eigen::Index fan_in) {
  Eigen::Index n = 1;
  for (auto d : shape) n *= d;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return ad::param(std::move(shape), rng.uniformVector(n, -bound, bound));
}

ad::Tensor zeros(std::vector<Eigen::Index> shape) {
  Eigen::Index n = 1;
  for (auto d : shape) n *= d;
  return ad::param(std::move(shape), Eigen::VectorXd::Zero(n));
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> convPlan(int d_model) {
  // stem, {down, res_a, res_b} x 4 stages, final; channels d/16 .. d
  const Eigen::Index c[5] = {d_model / 16, d_model / 8, d_model / 4, d_model / 2, d_model};
  std::vector<std::pair<Eigen::Index, Eigen::Index>> plan;
  plan.push_back({1, c[0]});
  for (int s = 0; s < 4; ++s) {
    plan.push_back({c[s], c[s + 1]});
    plan.push_back({c[s + 1], c[s + 1]});
    plan.push_back({c[s + 1], c[s + 1]});
  }
  plan.push_back({c[4], c[4]});
  return plan;
}

}  // namespace

Eigen::MatrixXd sinusoidalTable(int T, int d) {
  if (T < 1 || d < 2) throw ArgumentError("sinusoidalTable: need T >= 1 and d >= 2");
  Eigen::MatrixXd table(T, d);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < d; i += 2) {
      const double rate = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      table(t, i) = std::sin(static_cast<double>(t) / rate);
      if (i + 1 < d) table(t, i + 1) = std::cos(static_cast<double>(t) / rate);
    }
  return table;
}

GeneratorWeights initGenerator(const GeneratorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  GeneratorWeights w;
  w.config = config;
  const Eigen::Index d = config.d_model, h = config.mlp_hidden;

  for (auto [cin, cout] : convPlan(config.d_model)) {
    GeneratorWeights::Conv layer;
    layer.kernel = heUniform(rng, {3, 3, cin, cout}, 9 * cin);
    layer.bias = zeros({cout});
    w.conv.push_back(std::move(layer));
  }

  w.style_table = heUniform(rng, {config.n_styles, d}, d);
  w.input_w = heUniform(rng, {d, d}, d);
  w.input_b = zeros({d});
  w.positional = sinusoidalTable(config.T, config.d_model);

  for (int i = 0; i < config.n_tsa_layers; ++i) {
    GeneratorWeights::Tsa t;
    t.wq = heUniform(rng, {d, d}, d);
    t.wk = heUniform(rng, {d, d}, d);
    t.wv = heUniform(rng, {d, d}, d);
    t.wo = heUniform(rng, {d, d}, d);
    t.out_bias = zeros({d});
    t.ff1_w = heUniform(rng, {d, h}, d);
    t.ff1_b = zeros({h});
    t.ff2_w = heUniform(rng, {h, d}, h);
    t.ff2_b = zeros({d});
    w.tsa.push_back(std::move(t));
  }

  w.mod1_w = heUniform(rng, {d, h}, d);
  w.mod1_b = zeros({h});
  w.mod2_w = heUniform(rng, {h, 2 * d}, h);
  Eigen::VectorXd mod_bias = Eigen::VectorXd::Zero(2 * d);
  mod_bias.head(d).setOnes();  // (gamma, delta) = (1, 0) at start
  w.mod2_b = ad::param({2 * d}, std::move(mod_bias));

  w.expr1_w = heUniform(rng, {d, h}, d);
  w.expr1_b = zeros({h});
  w.expr2_w = heUniform(rng, {h, config.d_psi}, h);
  w.expr2_b = zeros({config.d_psi});
  w.jaw1_w = heUniform(rng, {d, h}, d);
  w.jaw1_b = zeros({h});
  w.jaw2_w = heUniform(rng, {h, 3}, h);
  w.jaw2_b = zeros({3});
  return w;
}

std::vector<ad::Tensor> GeneratorWeights::parameters() const {
  std::vector<ad::Tensor> out;
  for (const Conv& c : conv) {
    out.push_back(c.kernel);
    out.push_back(c.bias);
  }
  out.push_back(style_table);
  out.push_back(input_w);
  out.push_back(input_b);
  for (const Tsa& t : tsa)
    for (const ad::Tensor& p :
         {t.wq, t.wk, t.wv, t.wo, t.out_bias, t.ff1_w, t.ff1_b, t.ff2_w, t.ff2_b})
      out.push_back(p);
  for (const ad::Tensor& p : {mod1_w, mod1_b, mod2_w, mod2_b, expr1_w, expr1_b, expr2_w,
                              expr2_b, jaw1_w, jaw1_b, jaw2_w, jaw2_b})
    out.push_back(p);
  return out;
}

std::vector<std::string> GeneratorWeights::parameterNames() const {
  std::vector<std::string> out;
  for (size_t i = 0; i < conv.size(); ++i) {
    const std::string base = "conv" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    out.push_back(base + ".kernel");
    out.push_back(base + ".bias");
  }
  out.push_back("style_table");
  out.push_back("input.w");
  out.push_back("input.b");
  for (size_t i = 0; i < tsa.size(); ++i) {
    const std::string base = "tsa" + std::to_string(i);
    for (const char* f : {".wq", ".wk", ".wv", ".wo", ".out_bias", ".ff1.w", ".ff1.b", ".ff2.w",
                          ".ff2.b"})
      out.push_back(base + f);
  }
  for (const char* n : {"mod1.w", "mod1.b", "mod2.w", "mod2.b", "expr1.w", "expr1.b", "expr2.w",
                        "expr2.b", "jaw1.w", "jaw1.b", "jaw2.w", "jaw2.b"})
    out.push_back(n);
  return out;
}

void saveGenerator(const GeneratorWeights& weights, const std::filesystem::path& path) {
  Container c;
  c.meta()["kind"] = "generator_checkpoint";
  c.meta()["d_model"] = weights.config.d_model;
  c.meta()["n_tsa_layers"] = weights.config.n_tsa_layers;
  c.meta()["n_heads"] = weights.config.n_heads;
  c.meta()["mlp_hidden"] = weights.config.mlp_hidden;
  c.meta()["T"] = weights.config.T;
  c.meta()["n_styles"] = weights.config.n_styles;
  c.meta()["d_psi"] = weights.config.d_psi;
  c.meta()["use_style"] = weights.config.use_style;
  c.meta()["seed"] = weights.config.seed;
  const auto params = weights.parameters();
  const auto names = weights.parameterNames();
  for (size_t i = 0; i < params.size(); ++i)
    c.putArray(names[i], params[i]->shape, params[i]->value);
  c.save(path);
}

GeneratorWeights loadGenerator(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  if (!c.meta().contains("kind") || c.meta()["kind"] != "generator_checkpoint")
    throw SchemaError("loadGenerator: " + path.string() + " is not a generator checkpoint");
  GeneratorConfig cfg;
  try {
    cfg.d_model = c.meta().at("d_model").get<int>();
    cfg.n_tsa_layers = c.meta().at("n_tsa_layers").get<int>();
    cfg.n_heads = c.meta().at("n_heads").get<int>();
    cfg.mlp_hidden = c.meta().at("mlp_hidden").get<int>();
    cfg.T = c.meta().at("T").get<int>();
    cfg.n_styles = c.meta().at("n_styles").get<int>();
    cfg.d_psi = c.meta().at("d_psi").get<int>();
    cfg.use_style = c.meta().at("use_style").get<bool>();
    cfg.seed = c.meta().at("seed").get<unsigned long>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("loadGenerator: bad checkpoint metadata: " + std::string(e.what()));
  }
  GeneratorWeights w = initGenerator(cfg);
  const auto params = w.parameters();
  const auto names = w.parameterNames();
  for (size_t i = 0; i < params.size(); ++i) {
    if (!c.has(names[i]))
      throw SchemaError("loadGenerator: checkpoint is missing array '" + names[i] + "'");
    if (c.shape(names[i]) != params[i]->shape)
      throw SchemaError("loadGenerator: array '" + names[i] + "' has shape " +
                        ad::shapeStr(c.shape(names[i])) + ", expected " +
                        ad::shapeStr(params[i]->shape));
    params[i]->value = c.getFlat(names[i]);
  }
  return w;
}

ad::Tensor windowBatchTensor(const std::vector<AudioWindow>& windows) {
  if (windows.empty()) throw ArgumentError("windowBatchTensor: no windows");
  const Eigen::Index n = static_cast<Eigen::Index>(windows.size());
  Eigen::VectorXd flat(n * kWindowRows * kNumMels);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = windows[i].values;
    if (v.rows() != kWindowRows || v.cols() != kNumMels)
      throw ArgumentError("windowBatchTensor: window " + std::to_string(i) + " is " +
                          std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                          ", expected 16x80");
    for (Eigen::Index r = 0; r < kWindowRows; ++r)
      for (Eigen::Index c = 0; c < kNumMels; ++c)
        flat((i * kWindowRows + r) * kNumMels + c) = v(r, c);
  }
  return ad::constant({n, kWindowRows, kNumMels, 1}, std::move(flat));
}

ad::Tensor encodeAudioBatch(const ad::Tensor& windows, const GeneratorWeights& weights) {
  if (windows->shape.size() != 4 || windows->shape[3] != 1)
    throw ArgumentError("encodeAudioBatch: expected [N,16,80,1], got " +
                        ad::shapeStr(windows->shape));
  if (weights.conv.size() != 14)
    throw InternalError("encodeAudioBatch: conv stack has wrong layer count");
  auto cv = [&](const ad::Tensor& x, size_t i, int stride) {
    return ad::conv2d(x, weights.conv[i].kernel, weights.conv[i].bias, stride, 1);
  };
  ad::Tensor x = ad::gelu(cv(windows, 0, 1));
  size_t i = 1;
  for (int stage = 0; stage < 4; ++stage) {
    x = ad::gelu(cv(x, i++, 2));
    ad::Tensor r = ad::gelu(cv(x, i++, 1));
    r = cv(r, i++, 1);
    x = ad::gelu(ad::add(x, r));
  }
  x = ad::gelu(cv(x, i, 2));
  return ad::spatialMean(x);
}

Eigen::VectorXd encodeAudio(const AudioWindow& window, const GeneratorWeights& weights) {
  ad::Tensor feat = encodeAudioBatch(windowBatchTensor({window}), weights);
  return feat->value;
}

ad::Tensor embedStyle(const StyleCode& style, const GeneratorWeights& weights) {
  style.validate();
  if (style.one_hot.size() != weights.config.n_styles)
    throw ArgumentError("embedStyle: style has " + std::to_string(style.one_hot.size()) +
                        " slots, model expects " + std::to_string(weights.config.n_styles));
  return ad::embeddingLookup(weights.style_table, style.style_id);
}

namespace {

void checkTsaShapes(const ad::Tensor& x, const GeneratorWeights::Tsa& layer, int n_heads,
                    const char* who) {
  if (x->shape.size() != 2 || x->cols() != layer.wq->shape[0])
    throw ArgumentError(std::string(who) + ": input " + ad::shapeStr(x->shape) +
                        " does not match projection " + ad::shapeStr(layer.wq->shape));
  if (n_heads < 1 || layer.wq->shape[0] % n_heads != 0)
    throw ArgumentError(std::string(who) + ": feature width not divisible by head count");
}

}  // namespace

ad::Tensor attentionLogits(const ad::Tensor& x, const GeneratorWeights::Tsa& layer, int n_heads,
                           int head) {
  checkTsaShapes(x, layer, n_heads, "attentionLogits");
  if (head < 0 || head >= n_heads) throw ArgumentError("attentionLogits: head out of range");
  const Eigen::Index dh = layer.wq->shape[0] / n_heads;
  ad::Tensor qh = ad::slice(ad::matmul(x, layer.wq), 1, head * dh, dh);
  ad::Tensor kh = ad::slice(ad::matmul(x, layer.wk), 1, head * dh, dh);
  return ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
}

ad::Tensor tsaLayer(const ad::Tensor& x, const GeneratorWeights::Tsa& layer, int n_heads) {
  checkTsaShapes(x, layer, n_heads, "tsaLayer");
  const Eigen::Index d = layer.wq->shape[0];
  const Eigen::Index dh = d / n_heads;
  ad::Tensor xn = ad::layerNorm(x);
  ad::Tensor q = ad::matmul(xn, layer.wq);
  ad::Tensor k = ad::matmul(xn, layer.wk);
  ad::Tensor v = ad::matmul(xn, layer.wv);
  std::vector<ad::Tensor> heads;
  for (int h = 0; h < n_heads; ++h) {
    ad::Tensor qh = ad::slice(q, 1, h * dh, dh);
    ad::Tensor kh = ad::slice(k, 1, h * dh, dh);
    ad::Tensor vh = ad::slice(v, 1, h * dh, dh);
    ad::Tensor logits =
        ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(ad::matmul(ad::softmax(logits, 1), vh));
  }
  ad::Tensor ctx = heads.size() == 1 ? heads[0] : ad::concat(heads, 1);
  ad::Tensor x1 = ad::add(x, ad::linear(ctx, layer.wo, layer.out_bias));
  ad::Tensor ff = ad::linear(ad::gelu(ad::linear(ad::layerNorm(x1), layer.ff1_w, layer.ff1_b)),
                             layer.ff2_w, layer.ff2_b);
  return ad::add(x1, ff);
}

ad::Tensor modulate(const ad::Tensor& a, const ad::Tensor& s_emb,
                    const GeneratorWeights& weights) {
  if (a->shape.size() != 2 || a->cols() != weights.config.d_model)
    throw ArgumentError("modulate: input " + ad::shapeStr(a->shape) + " does not match d_model " +
                        std::to_string(weights.config.d_model));
  if (!weights.config.use_style) return a;  // gamma = 1, delta = 0 exactly
  if (s_emb->shape.size() != 1 || s_emb->numel() != weights.config.d_model)
    throw ArgumentError("modulate: style embedding " + ad::shapeStr(s_emb->shape) +
                        " does not match d_model");
  const Eigen::Index d = weights.config.d_model;
  ad::Tensor h = ad::gelu(
      ad::linear(ad::reshape(s_emb, {1, d}), weights.mod1_w, weights.mod1_b));
  ad::Tensor gd = ad::linear(h, weights.mod2_w, weights.mod2_b);  // [1, 2d]
  ad::Tensor gamma = ad::reshape(ad::slice(gd, 1, 0, d), {d});
  ad::Tensor delta = ad::reshape(ad::slice(gd, 1, d, d), {d});
  return ad::add(ad::mul(a, ad::broadcastRows(gamma, a->rows())),
                 ad::broadcastRows(delta, a->rows()));
}

GeneratorOutput generateBatchGraph(const ad::Tensor& windows,
                                   const std::vector<StyleCode>& styles,
                                   const GeneratorWeights& weights) {
  const GeneratorConfig& cfg = weights.config;
  const Eigen::Index B = static_cast<Eigen::Index>(styles.size());
  if (B < 1) throw ArgumentError("generateBatchGraph: no styles");
  if (windows->shape.size() != 4 || windows->shape[0] != B * cfg.T)
    throw ArgumentError("generateBatchGraph: expected " + std::to_string(B * cfg.T) +
                        " windows for " + std::to_string(B) + " segments of length " +
                        std::to_string(cfg.T) + ", got " + ad::shapeStr(windows->shape));

  ad::Tensor feats = encodeAudioBatch(windows, weights);
  ad::Tensor x = ad::linear(feats, weights.input_w, weights.input_b);

  Eigen::MatrixXd pos_tiled(B * cfg.T, cfg.d_model);
  for (Eigen::Index b = 0; b < B; ++b)
    pos_tiled.middleRows(b * cfg.T, cfg.T) = weights.positional;
  x = ad::add(x, ad::constant(pos_tiled));

  std::vector<ad::Tensor> modulated;
  for (Eigen::Index b = 0; b < B; ++b) {
    ad::Tensor xb = B == 1 ? x : ad::slice(x, 0, b * cfg.T, cfg.T);
    for (const auto& layer : weights.tsa) xb = tsaLayer(xb, layer, cfg.n_heads);
    xb = ad::layerNorm(xb);
    if (cfg.use_style)
      xb = modulate(xb, embedStyle(styles[b], weights), weights);
    modulated.push_back(xb);
  }
  ad::Tensor body = modulated.size() == 1 ? modulated[0] : ad::concat(modulated, 0);

  GeneratorOutput out;
  out.psi = ad::linear(ad::gelu(ad::linear(body, weights.expr1_w, weights.expr1_b)),
                       weights.expr2_w, weights.expr2_b);
  out.jaw = ad::scale(
      ad::tanhOp(ad::linear(ad::gelu(ad::linear(body, weights.jaw1_w, weights.jaw1_b)),
                            weights.jaw2_w, weights.jaw2_b)),
      0.5);
  return out;
}

GeneratorOutput generateGraph(const ad::Tensor& windows, const StyleCode& style,
                              const GeneratorWeights& weights) {
  return generateBatchGraph(windows, {style}, weights);
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> generate(const std::vector<AudioWindow>& windows,
                                                     const StyleCode& style,
                                                     const GeneratorWeights& weights) {
  if (static_cast<int>(windows.size()) != weights.config.T)
    throw ArgumentError("generate: got " + std::to_string(windows.size()) +
                        " windows, model expects exactly " + std::to_string(weights.config.T));
  GeneratorOutput out = generateGraph(windowBatchTensor(windows), style, weights);
  return {ad::toMatrix(out.psi), ad::toMatrix(out.jaw)};
}

std::vector<FaceParams> assembleAnimation(const FaceParams& ref,
                                          const Eigen::MatrixXd& psi_seq,
                                          const Eigen::MatrixXd& jaw_seq,
                                          const Eigen::MatrixXd& cameras) {
  ref.validate();
  const Eigen::Index T = psi_seq.rows();
  if (jaw_seq.rows() != T || cameras.rows() != T)
    throw ArgumentError("assembleAnimation: sequence lengths differ (psi " + std::to_string(T) +
                        ", jaw " + std::to_string(jaw_seq.rows()) + ", cameras " +
                        std::to_string(cameras.rows()) + ")");
  if (psi_seq.cols() != ref.psi.size())
    throw ArgumentError("assembleAnimation: psi width " + std::to_string(psi_seq.cols()) +
                        " does not match reference " + std::to_string(ref.psi.size()));
  if (jaw_seq.cols() != 3 || cameras.cols() != 3)
    throw ArgumentError("assembleAnimation: jaw and camera rows must have 3 columns");

  std::vector<FaceParams> frames;
  frames.reserve(static_cast<size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    FaceParams p = ref;
    p.psi = psi_seq.row(t);
    p.setJaw(jaw_seq.row(t));
    p.camera = cameras.row(t);
    p.validate();
    frames.push_back(std::move(p));
  }
  return frames;
}

}  // namespace anim3d
