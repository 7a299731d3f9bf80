#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <utility>
#include <vector>

#include "anim3d/audio.hpp"
#include "anim3d/head_model.hpp"
#include "anim3d/tensor.hpp"

namespace anim3d {

/// One-hot selector of a talking style.
struct StyleCode {
  int style_id = 0;
  Eigen::VectorXd one_hot;

  void validate() const;
};

StyleCode makeStyleCode(int style_id, int n_styles);

struct GeneratorConfig {
  int d_model = 512;
  int n_tsa_layers = 4;
  int n_heads = 4;
  int mlp_hidden = 1024;
  int T = 12;
  int n_styles = 4;
  int d_psi = 10;
  bool use_style = true;  // when false the modulation block is forced to identity
  unsigned long seed = 1;

  /// Desk-scale preset: d_model 64, 2 attention layers.
  static GeneratorConfig tiny();

  void validate() const;
};

/// All learnable state plus the fixed positional table.
///
/// The audio encoder is a 2-D conv stack over a 16x80 log-mel window laid out
/// as [batch, 16, 80, 1]: a 3x3 stem to d/16 channels, then four stages of
/// stride-2 3x3 downsampling (doubling channels) each followed by a two-conv
/// identity residual block, then one more stride-2 3x3 conv at d channels,
/// then a global spatial mean. Channel progression for d = 512:
/// 32 -> 64 -> 128 -> 256 -> 512. GELU activations throughout (smooth, so
/// gradient checks hold at any point).
struct GeneratorWeights {
  struct Conv {
    ad::Tensor kernel;  // [3,3,c_in,c_out]
    ad::Tensor bias;    // [c_out]
  };
  struct Tsa {
    ad::Tensor wq, wk, wv;    // [d,d], no bias (Q = X Wq etc.)
    ad::Tensor wo, out_bias;  // head-concat projection
    ad::Tensor ff1_w, ff1_b;  // [d, mlp_hidden]
    ad::Tensor ff2_w, ff2_b;  // [mlp_hidden, d]
  };

  GeneratorConfig config;
  std::vector<Conv> conv;  // stem, {down, res_a, res_b} x4, final
  ad::Tensor style_table;  // [S, d_model]
  ad::Tensor input_w, input_b;
  Eigen::MatrixXd positional;  // [T, d_model], fixed sinusoidal
  std::vector<Tsa> tsa;
  ad::Tensor mod1_w, mod1_b, mod2_w, mod2_b;    // style -> (gamma, delta)
  ad::Tensor expr1_w, expr1_b, expr2_w, expr2_b;
  ad::Tensor jaw1_w, jaw1_b, jaw2_w, jaw2_b;

  /// Stable-order list of every trainable tensor (for the optimizer and IO).
  std::vector<ad::Tensor> parameters() const;
  /// Matching names for each entry of parameters().
  std::vector<std::string> parameterNames() const;
};

/// Seeded He-uniform initialization; biases zero except the modulation
/// output bias, which starts at (gamma, delta) = (1, 0) so modulation is the
/// identity at step zero.
GeneratorWeights initGenerator(const GeneratorConfig& config);

void saveGenerator(const GeneratorWeights& weights, const std::filesystem::path& path);
GeneratorWeights loadGenerator(const std::filesystem::path& path);

/// pos[t, 2i] = sin(t / 10000^{2i/d}), pos[t, 2i+1] = cos(t / 10000^{2i/d}).
Eigen::MatrixXd sinusoidalTable(int T, int d);

/// Stacks windows into the [N,16,80,1] constant the conv stack consumes.
ad::Tensor windowBatchTensor(const std::vector<AudioWindow>& windows);

/// Conv stack + pooling: [N,16,80,1] -> [N, d_model].
ad::Tensor encodeAudioBatch(const ad::Tensor& windows, const GeneratorWeights& weights);

/// Single-window convenience wrapper returning the pooled feature.
Eigen::VectorXd encodeAudio(const AudioWindow& window, const GeneratorWeights& weights);

/// Row style_id of the embedding table, shape [d_model].
ad::Tensor embedStyle(const StyleCode& style, const GeneratorWeights& weights);

/// Pre-softmax attention logits Q_h K_h^T / sqrt(d_head) for one head.
ad::Tensor attentionLogits(const ad::Tensor& x, const GeneratorWeights::Tsa& layer, int n_heads,
                           int head);

/// Full pre-norm block: x + MHA(LN(x)) then + FF(LN(.)).
ad::Tensor tsaLayer(const ad::Tensor& x, const GeneratorWeights::Tsa& layer, int n_heads);

/// B = gamma (x) A + delta with (gamma, delta) = MLP(s_emb), broadcast over
/// rows. With config.use_style = false this is the identity map.
ad::Tensor modulate(const ad::Tensor& a, const ad::Tensor& s_emb,
                    const GeneratorWeights& weights);

struct GeneratorOutput {
  ad::Tensor psi;  // [T, d_psi]
  ad::Tensor jaw;  // [T, 3]
};

/// Differentiable full pipeline for one clip segment of exactly T windows.
GeneratorOutput generateGraph(const ad::Tensor& windows, const StyleCode& style,
                              const GeneratorWeights& weights);

/// Batched variant: windows [B*T,16,80,1] and one style per segment; outputs
/// are stacked over segments ([B*T, d_psi], [B*T, 3]).
GeneratorOutput generateBatchGraph(const ad::Tensor& windows,
                                   const std::vector<StyleCode>& styles,
                                   const GeneratorWeights& weights);

/// Inference wrapper: T audio windows -> (psi rows, jaw rows).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> generate(const std::vector<AudioWindow>& windows,
                                                     const StyleCode& style,
                                                     const GeneratorWeights& weights);

/// Per frame: beta/albedo/lighting and neck/eye pose copied from `ref`,
/// jaw pose from jaw_seq, expression from psi_seq, camera from cameras rows.
/// The global rotation slice is taken from `ref` as well (an external pose
/// track can overwrite it downstream).
std::vector<FaceParams> assembleAnimation(const FaceParams& ref,
                                          const Eigen::MatrixXd& psi_seq,
                                          const Eigen::MatrixXd& jaw_seq,
                                          const Eigen::MatrixXd& cameras);

}  // namespace anim3d
