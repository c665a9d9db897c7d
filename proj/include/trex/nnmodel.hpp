// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_NNMODEL_HPP
#define TREX_NNMODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trex/numkit.hpp"

namespace trex {

/// Encoder f: adaptive average pooling of the image to a fixed pool_grid^2 x 3
/// grid, flattened, then an MLP to output_dim. Pooling keeps the encoder
/// resolution-agnostic, which is what multi-crop relies on.
struct EncoderConfig {
  std::size_t pool_grid = 4;
  std::vector<std::size_t> hidden_widths{128};
  std::size_t output_dim = 64;
  bool use_batchnorm = true;

  void validate() const;
};

/// Projector g: L hidden layers (linear, batch-norm, GeLU) of hidden_dim, a
/// linear map to bottleneck_dim, then output l2-normalization. L = 0 is the
/// identity projector (bottleneck_dim must equal the encoder output).
struct ProjectorConfig {
  std::size_t hidden_layers = 1;    // L
  std::size_t hidden_dim = 256;     // d_h
  std::size_t bottleneck_dim = 32;  // d_b
  bool input_l2 = true;
  bool normalize_output = true;  // forced off by the vanilla softmax objective
};

/// Predictor h: linear(d_b -> inner_dim), batch-norm, GeLU, linear back to
/// d_b, l2-normalize. Identity when disabled.
struct PredictorConfig {
  bool enabled = false;
  std::size_t inner_dim = 64;  // d_p
};

enum class ClassifierMode { Learned, FrozenOrthogonal, Absent };

struct BatchNormParams {
  Tensor gamma, beta, running_mean, running_var;
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
};

struct Block {
  Tensor weight;  // out x in
  Tensor bias;    // out
  std::optional<BatchNormParams> bn;
  bool gelu = false;
};

struct Mlp {
  std::vector<Block> blocks;
};

struct ModelParams {
  EncoderConfig encoder_cfg;
  ProjectorConfig projector_cfg;
  PredictorConfig predictor_cfg;
  ClassifierMode classifier_mode = ClassifierMode::Learned;
  std::size_t num_classes = 0;

  Mlp encoder, projector, predictor;
  Tensor class_weights;  // C x d_b (. absent mode keeps an empty tensor)
};

enum class ParamKind : std::uint8_t {
  Weight,
  Bias,
  BnGamma,
  BnBeta,
  BnRunningMean,
  BnRunningVar
};

inline bool is_trainable(ParamKind k) {
  return k != ParamKind::BnRunningMean && k != ParamKind::BnRunningVar;
}

inline bool decays(ParamKind k) { return k == ParamKind::Weight || k == ParamKind::Bias; }

struct ParamRef {
  std::string name;
  ParamKind kind;
  Tensor* tensor;
};

/// All parameters in deterministic order: encoder, projector, predictor,
/// classifier last. Running statistics included (kind marks them).
std::vector<ParamRef> all_params(ModelParams& params);
std::vector<ParamRef> trainable_params(ModelParams& params);
std::vector<ParamRef> mlp_params(Mlp& mlp, const std::string& prefix);

/// Gradients aligned with trainable_params() order.
struct ModelGrads {
  std::vector<Tensor> tensors;
};

ModelGrads zero_grads(ModelParams& params);
void accumulate(ModelGrads& into, const ModelGrads& from);

enum class RunMode { Train, Eval };

struct BlockCache {
  Tensor input;
  Tensor bn_xhat;
  std::vector<double> bn_inv_std;
  Tensor act_in;
};

struct MlpCache {
  std::vector<BlockCache> blocks;
  Tensor out_prenorm;             // rows before output l2 (when normalized)
  std::vector<double> out_norms;  // max(||row||, eps)
  bool normalized_output = false;
};

struct ForwardCache {
  RunMode mode = RunMode::Eval;
  std::size_t resolution = 0;
  MlpCache encoder, projector, predictor;
  Tensor x_prenorm;  // encoder output before optional input l2
  std::vector<double> x_norms;
  bool input_normalized = false;
};

struct ForwardResult {
  Tensor x;  // encoder output, B x d (the transferable representation)
  Tensor z;  // loss-facing embedding, B x d_b (unit rows when normalized)
  ForwardCache cache;
};

/// Full stack forward over one resolution group. batch is B x (res*res*3).
/// Train mode uses batch statistics in batch-norm; running statistics are
/// updated only when update_running_stats is set.
ForwardResult forward(ModelParams& params, const Tensor& batch, std::size_t resolution,
                      RunMode mode, bool update_running_stats);

/// Momentum-branch forward (encoder + projector only, projector output
/// normalized). Uses batch statistics, never mutates running statistics.
Tensor forward_ema_embed(struct EmaShadow& shadow, const ModelParams& online,
                         const Tensor& batch, std::size_t resolution);

/// Exact reverse-mode gradients for every trainable parameter given the
/// gradient of the loss w.r.t. the loss-facing embedding z. The classifier
/// slot is left zero (losses produce grad_W themselves).
ModelGrads backward(ModelParams& params, const ForwardCache& cache, const Tensor& grad_z);

/// EMA shadows of encoder and projector plus the momentum constant.
struct EmaShadow {
  Mlp encoder, projector;
  double momentum = 0.999;
  bool average_bn_stats = true;  // false copies online running stats instead
};

EmaShadow make_ema_shadow(const ModelParams& params, double momentum, bool average_bn_stats);

/// shadow <- m * shadow + (1 - m) * online for every parameter; running
/// statistics follow average_bn_stats.
void ema_update(EmaShadow& shadow, ModelParams& online);

ModelParams init_params(const EncoderConfig& enc, const ProjectorConfig& proj,
                        const PredictorConfig& pred, ClassifierMode mode,
                        std::size_t num_classes, std::uint64_t seed);

double gelu(double x);
double gelu_grad(double x);

/// Adaptive average pooling of (res*res, 3) rows to a flattened grid^2 * 3
/// vector per batch row.
Tensor adaptive_pool(const Tensor& batch, std::size_t resolution, std::size_t grid);

}  // namespace trex

#endif  // TREX_NNMODEL_HPP
