// SPDX-License-Identifier: Apache-2.0

#include "trex/nnmodel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trex {

namespace {

constexpr double kNormEps = 1e-12;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const std::size_t n = input.rows(), in = input.cols(), out = weight.rows();
  if (weight.cols() != in)
    throw std::invalid_argument("linear: input width " + std::to_string(in) +
                                " does not match weight fan-in " + std::to_string(weight.cols()));
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = input.row(r).data();
    double* yr = y.row(r).data();
    for (std::size_t o = 0; o < out; ++o) yr[o] = bias[o];
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * weight.at(o, k);
    }
  }
  return y;
}

struct NormCache {
  Tensor prenorm;
  std::vector<double> raw_norms;
};

Tensor normalize_rows_cached(const Tensor& m, NormCache& cache) {
  cache.prenorm = m;
  cache.raw_norms.resize(m.rows());
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double nrm = l2_norm(m.row(r));
    cache.raw_norms[r] = nrm;
    const double denom = std::max(nrm, kNormEps);
    for (double& v : out.row(r)) v /= denom;
  }
  quantize(out);
  return out;
}

Tensor normalize_rows_backward(const Tensor& grad, const Tensor& normalized,
                               const std::vector<double>& raw_norms) {
  Tensor out = grad;
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    const double nrm = raw_norms[r];
    auto g = out.row(r);
    if (nrm > kNormEps) {
      const double zg = dot(normalized.row(r), g);
      auto z = normalized.row(r);
      for (std::size_t c = 0; c < g.size(); ++c) g[c] = (g[c] - z[c] * zg) / nrm;
    } else {
      for (double& v : g) v /= kNormEps;
    }
  }
  return out;
}

void check_finite(const Tensor& t, const char* stage, std::size_t block) {
  if (!t.all_finite())
    throw std::runtime_error(std::string("numeric fault: non-finite activation in ") + stage +
                             " block " + std::to_string(block));
}

Tensor mlp_forward(Mlp& mlp, const Tensor& input, RunMode mode, bool update_running_stats,
                   MlpCache& cache, const char* stage) {
  cache.blocks.assign(mlp.blocks.size(), BlockCache{});
  Tensor h = input;
  const std::size_t n = input.rows();
  for (std::size_t b = 0; b < mlp.blocks.size(); ++b) {
    Block& blk = mlp.blocks[b];
    BlockCache& bc = cache.blocks[b];
    bc.input = h;
    h = linear_forward(h, blk.weight, blk.bias);
    if (blk.bn) {
      BatchNormParams& bn = *blk.bn;
      const std::size_t width = h.cols();
      bc.bn_inv_std.resize(width);
      Tensor xhat({n, width});
      if (mode == RunMode::Train) {
        for (std::size_t j = 0; j < width; ++j) {
          double mean = 0.0;
          for (std::size_t r = 0; r < n; ++r) mean += h.at(r, j);
          mean /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            const double d = h.at(r, j) - mean;
            var += d * d;
          }
          var /= static_cast<double>(n);
          const double inv = 1.0 / std::sqrt(var + BatchNormParams::kEps);
          bc.bn_inv_std[j] = inv;
          for (std::size_t r = 0; r < n; ++r) xhat.at(r, j) = (h.at(r, j) - mean) * inv;
          if (update_running_stats) {
            bn.running_mean[j] =
                (1.0 - BatchNormParams::kMomentum) * bn.running_mean[j] +
                BatchNormParams::kMomentum * mean;
            bn.running_var[j] = (1.0 - BatchNormParams::kMomentum) * bn.running_var[j] +
                                BatchNormParams::kMomentum * var;
          }
        }
      } else {
        for (std::size_t j = 0; j < width; ++j) {
          const double inv = 1.0 / std::sqrt(bn.running_var[j] + BatchNormParams::kEps);
          bc.bn_inv_std[j] = inv;
          for (std::size_t r = 0; r < n; ++r)
            xhat.at(r, j) = (h.at(r, j) - bn.running_mean[j]) * inv;
        }
      }
      bc.bn_xhat = xhat;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < width; ++j)
          h.at(r, j) = bn.gamma[j] * xhat.at(r, j) + bn.beta[j];
    }
    if (blk.gelu) {
      bc.act_in = h;
      for (double& v : h.data()) v = gelu(v);
    }
    quantize(h);
    check_finite(h, stage, b);
  }
  return h;
}

/// Appends per-block trainable gradients (weight, bias, gamma, beta) in
/// forward block order; returns the gradient w.r.t. the mlp input.
Tensor mlp_backward(Mlp& mlp, const MlpCache& cache, const Tensor& grad_output,
                    std::vector<Tensor>& grads_out) {
  std::vector<std::vector<Tensor>> per_block(mlp.blocks.size());
  Tensor g = grad_output;
  const std::size_t n = grad_output.rows();
  for (std::size_t bi = mlp.blocks.size(); bi-- > 0;) {
    Block& blk = mlp.blocks[bi];
    const BlockCache& bc = cache.blocks[bi];

    if (blk.gelu) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= gelu_grad(bc.act_in[i]);
    }

    Tensor ggamma, gbeta;
    if (blk.bn) {
      const BatchNormParams& bn = *blk.bn;
      const std::size_t width = g.cols();
      ggamma = Tensor({width});
      gbeta = Tensor({width});
      Tensor gx({n, width});
      for (std::size_t j = 0; j < width; ++j) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const double gh = g.at(r, j) * bn.gamma[j];  // grad w.r.t. xhat
          sum_g += gh;
          sum_gx += gh * bc.bn_xhat.at(r, j);
          ggamma[j] += g.at(r, j) * bc.bn_xhat.at(r, j);
          gbeta[j] += g.at(r, j);
        }
        const double inv = bc.bn_inv_std[j];
        const double dn = static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          const double gh = g.at(r, j) * bn.gamma[j];
          gx.at(r, j) = inv / dn * (dn * gh - sum_g - bc.bn_xhat.at(r, j) * sum_gx);
        }
      }
      g = gx;
    }

    // Linear: gW = g^T * input, gb = column sums, ginput = g * W.
    const std::size_t out = blk.weight.rows(), in = blk.weight.cols();
    Tensor gw({out, in}), gb({out});
    for (std::size_t r = 0; r < n; ++r) {
      const double* gr = g.row(r).data();
      const double* xr = bc.input.row(r).data();
      for (std::size_t o = 0; o < out; ++o) {
        gb[o] += gr[o];
        const double gv = gr[o];
        double* gwr = gw.row(o).data();
        for (std::size_t k = 0; k < in; ++k) gwr[k] += gv * xr[k];
      }
    }
    Tensor ginput({n, in});
    for (std::size_t r = 0; r < n; ++r) {
      const double* gr = g.row(r).data();
      double* gir = ginput.row(r).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double gv = gr[o];
        const double* wr = blk.weight.row(o).data();
        for (std::size_t k = 0; k < in; ++k) gir[k] += gv * wr[k];
      }
    }
    quantize(gw);
    quantize(gb);
    per_block[bi].push_back(std::move(gw));
    per_block[bi].push_back(std::move(gb));
    if (blk.bn) {
      quantize(ggamma);
      quantize(gbeta);
      per_block[bi].push_back(std::move(ggamma));
      per_block[bi].push_back(std::move(gbeta));
    }
    g = std::move(ginput);
  }
  for (auto& blk_grads : per_block)
    for (auto& t : blk_grads) grads_out.push_back(std::move(t));
  return g;
}

Block make_linear(std::size_t in, std::size_t out, bool with_bn, bool with_gelu, Rng& rng) {
  Block b;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  b.weight = Tensor({out, in});
  for (double& v : b.weight.data()) v = rng.uniform(-bound, bound);
  b.bias = Tensor({out});
  for (double& v : b.bias.data()) v = rng.uniform(-bound, bound);
  if (with_bn) {
    BatchNormParams bn;
    bn.gamma = Tensor({out});
    bn.beta = Tensor({out});
    bn.running_mean = Tensor({out});
    bn.running_var = Tensor({out});
    for (double& v : bn.gamma.data()) v = 1.0;
    for (double& v : bn.running_var.data()) v = 1.0;
    b.bn = std::move(bn);
  }
  b.gelu = with_gelu;
  return b;
}

void ema_blend(Tensor& shadow, const Tensor& online, double m) {
  if (shadow.size() != online.size())
    throw std::invalid_argument("ema_update: shape mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i)
    shadow[i] = trex::quantize(m * shadow[i] + (1.0 - m) * online[i]);
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

void EncoderConfig::validate() const {
  if (pool_grid < 1) throw std::invalid_argument("encoder: pool_grid must be >= 1");
  if (output_dim < 1) throw std::invalid_argument("encoder: output_dim must be >= 1");
  for (std::size_t w : hidden_widths)
    if (w == 0) throw std::invalid_argument("encoder: hidden widths must be positive");
}

Tensor adaptive_pool(const Tensor& batch, std::size_t resolution, std::size_t grid) {
  const std::size_t n = batch.rows();
  if (batch.cols() != resolution * resolution * 3)
    throw std::invalid_argument("adaptive_pool: row width does not match resolution");
  Tensor out({n, grid * grid * 3});
  for (std::size_t r = 0; r < n; ++r) {
    const double* src = batch.row(r).data();
    double* dst = out.row(r).data();
    for (std::size_t gy = 0; gy < grid; ++gy) {
      const std::size_t ys = gy * resolution / grid;
      const std::size_t ye = (gy + 1) * resolution / grid + ((gy + 1) * resolution % grid ? 1 : 0);
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const std::size_t xs = gx * resolution / grid;
        const std::size_t xe =
            (gx + 1) * resolution / grid + ((gx + 1) * resolution % grid ? 1 : 0);
        double acc[3] = {0.0, 0.0, 0.0};
        for (std::size_t y = ys; y < ye; ++y)
          for (std::size_t x = xs; x < xe; ++x)
            for (std::size_t c = 0; c < 3; ++c) acc[c] += src[(y * resolution + x) * 3 + c];
        const double inv = 1.0 / static_cast<double>((ye - ys) * (xe - xs));
        for (std::size_t c = 0; c < 3; ++c) dst[(gy * grid + gx) * 3 + c] = acc[c] * inv;
      }
    }
  }
  quantize(out);
  return out;
}

std::vector<ParamRef> mlp_params(Mlp& mlp, const std::string& prefix) {
  std::vector<ParamRef> refs;
  for (std::size_t b = 0; b < mlp.blocks.size(); ++b) {
    const std::string base = prefix + "." + std::to_string(b);
    refs.push_back({base + ".weight", ParamKind::Weight, &mlp.blocks[b].weight});
    refs.push_back({base + ".bias", ParamKind::Bias, &mlp.blocks[b].bias});
    if (mlp.blocks[b].bn) {
      refs.push_back({base + ".bn_gamma", ParamKind::BnGamma, &mlp.blocks[b].bn->gamma});
      refs.push_back({base + ".bn_beta", ParamKind::BnBeta, &mlp.blocks[b].bn->beta});
      refs.push_back(
          {base + ".bn_running_mean", ParamKind::BnRunningMean, &mlp.blocks[b].bn->running_mean});
      refs.push_back(
          {base + ".bn_running_var", ParamKind::BnRunningVar, &mlp.blocks[b].bn->running_var});
    }
  }
  return refs;
}

std::vector<ParamRef> all_params(ModelParams& params) {
  std::vector<ParamRef> refs = mlp_params(params.encoder, "encoder");
  for (auto& r : mlp_params(params.projector, "projector")) refs.push_back(r);
  for (auto& r : mlp_params(params.predictor, "predictor")) refs.push_back(r);
  if (params.classifier_mode != ClassifierMode::Absent)
    refs.push_back({"classifier.weight", ParamKind::Weight, &params.class_weights});
  return refs;
}

std::vector<ParamRef> trainable_params(ModelParams& params) {
  std::vector<ParamRef> refs;
  for (auto& r : all_params(params))
    if (is_trainable(r.kind)) refs.push_back(r);
  return refs;
}

ModelGrads zero_grads(ModelParams& params) {
  ModelGrads g;
  for (auto& r : trainable_params(params)) g.tensors.emplace_back(r.tensor->shape());
  return g;
}

void accumulate(ModelGrads& into, const ModelGrads& from) {
  if (into.tensors.size() != from.tensors.size())
    throw std::invalid_argument("accumulate: gradient layouts differ");
  for (std::size_t i = 0; i < into.tensors.size(); ++i) {
    Tensor& a = into.tensors[i];
    const Tensor& b = from.tensors[i];
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    quantize(a);
  }
}

namespace {

struct StackOutput {
  Tensor x;
  Tensor z;
};

StackOutput stack_forward(Mlp& encoder, Mlp& projector, Mlp* predictor,
                          const EncoderConfig& enc_cfg, const ProjectorConfig& proj_cfg,
                          const Tensor& batch, std::size_t resolution, RunMode mode,
                          bool update_running_stats, ForwardCache& cache) {
  cache.mode = mode;
  cache.resolution = resolution;
  Tensor pooled = adaptive_pool(batch, resolution, enc_cfg.pool_grid);
  Tensor x = mlp_forward(encoder, pooled, mode, update_running_stats, cache.encoder, "encoder");

  Tensor h = x;
  cache.input_normalized = proj_cfg.input_l2;
  if (proj_cfg.input_l2) {
    NormCache nc;
    h = normalize_rows_cached(h, nc);
    cache.x_prenorm = std::move(nc.prenorm);
    cache.x_norms = std::move(nc.raw_norms);
  }

  Tensor z = mlp_forward(projector, h, mode, update_running_stats, cache.projector, "projector");
  cache.projector.normalized_output = proj_cfg.normalize_output;
  if (proj_cfg.normalize_output) {
    NormCache nc;
    z = normalize_rows_cached(z, nc);
    cache.projector.out_prenorm = std::move(nc.prenorm);
    cache.projector.out_norms = std::move(nc.raw_norms);
  }

  if (predictor != nullptr && !predictor->blocks.empty()) {
    Tensor p =
        mlp_forward(*predictor, z, mode, update_running_stats, cache.predictor, "predictor");
    cache.predictor.normalized_output = proj_cfg.normalize_output;
    if (proj_cfg.normalize_output) {
      NormCache nc;
      p = normalize_rows_cached(p, nc);
      cache.predictor.out_prenorm = std::move(nc.prenorm);
      cache.predictor.out_norms = std::move(nc.raw_norms);
    }
    z = std::move(p);
  }
  return {std::move(x), std::move(z)};
}

}  // namespace

ForwardResult forward(ModelParams& params, const Tensor& batch, std::size_t resolution,
                      RunMode mode, bool update_running_stats) {
  if (params.projector.blocks.empty() &&
      params.projector_cfg.bottleneck_dim != params.encoder_cfg.output_dim)
    throw std::invalid_argument("forward: identity projector requires d_b == d");
  ForwardResult res;
  Mlp* pred = params.predictor_cfg.enabled ? &params.predictor : nullptr;
  StackOutput out =
      stack_forward(params.encoder, params.projector, pred, params.encoder_cfg,
                    params.projector_cfg, batch, resolution, mode, update_running_stats,
                    res.cache);
  res.x = std::move(out.x);
  res.z = std::move(out.z);
  return res;
}

Tensor forward_ema_embed(EmaShadow& shadow, const ModelParams& online, const Tensor& batch,
                         std::size_t resolution) {
  ForwardCache cache;
  ProjectorConfig pcfg = online.projector_cfg;
  pcfg.normalize_output = true;  // memory entries are always unit-norm
  StackOutput out = stack_forward(shadow.encoder, shadow.projector, nullptr,
                                  online.encoder_cfg, pcfg, batch, resolution, RunMode::Train,
                                  /*update_running_stats=*/false, cache);
  return out.z;
}

ModelGrads backward(ModelParams& params, const ForwardCache& cache, const Tensor& grad_z) {
  if (cache.mode != RunMode::Train)
    throw std::invalid_argument("backward: forward cache was not built in train mode");

  std::vector<Tensor> enc_grads, proj_grads, pred_grads;
  Tensor g = grad_z;

  if (params.predictor_cfg.enabled && !params.predictor.blocks.empty()) {
    if (cache.predictor.normalized_output) {
      // normalized output rows are exactly what the loss saw; rebuild them
      Tensor normalized = cache.predictor.out_prenorm;
      for (std::size_t r = 0; r < normalized.rows(); ++r) {
        const double denom = std::max(cache.predictor.out_norms[r], kNormEps);
        for (double& v : normalized.row(r)) v /= denom;
      }
      g = normalize_rows_backward(g, normalized, cache.predictor.out_norms);
    }
    g = mlp_backward(params.predictor, cache.predictor, g, pred_grads);
  }

  if (cache.projector.normalized_output) {
    Tensor normalized = cache.projector.out_prenorm;
    for (std::size_t r = 0; r < normalized.rows(); ++r) {
      const double denom = std::max(cache.projector.out_norms[r], kNormEps);
      for (double& v : normalized.row(r)) v /= denom;
    }
    g = normalize_rows_backward(g, normalized, cache.projector.out_norms);
  }
  g = mlp_backward(params.projector, cache.projector, g, proj_grads);

  if (cache.input_normalized) {
    Tensor normalized = cache.x_prenorm;
    for (std::size_t r = 0; r < normalized.rows(); ++r) {
      const double denom = std::max(cache.x_norms[r], kNormEps);
      for (double& v : normalized.row(r)) v /= denom;
    }
    g = normalize_rows_backward(g, normalized, cache.x_norms);
  }
  mlp_backward(params.encoder, cache.encoder, g, enc_grads);

  ModelGrads grads;
  grads.tensors.reserve(enc_grads.size() + proj_grads.size() + pred_grads.size() + 1);
  for (auto& t : enc_grads) grads.tensors.push_back(std::move(t));
  for (auto& t : proj_grads) grads.tensors.push_back(std::move(t));
  for (auto& t : pred_grads) grads.tensors.push_back(std::move(t));
  if (params.classifier_mode != ClassifierMode::Absent)
    grads.tensors.emplace_back(params.class_weights.shape());
  return grads;
}

EmaShadow make_ema_shadow(const ModelParams& params, double momentum, bool average_bn_stats) {
  EmaShadow s;
  s.encoder = params.encoder;
  s.projector = params.projector;
  s.momentum = momentum;
  s.average_bn_stats = average_bn_stats;
  return s;
}

void ema_update(EmaShadow& shadow, ModelParams& online) {
  auto blend_mlp = [&](Mlp& s, Mlp& o) {
    auto srefs = mlp_params(s, "s");
    auto orefs = mlp_params(o, "o");
    if (srefs.size() != orefs.size())
      throw std::invalid_argument("ema_update: shadow does not mirror online network");
    for (std::size_t i = 0; i < srefs.size(); ++i) {
      const bool is_stat = !is_trainable(srefs[i].kind);
      if (is_stat && !shadow.average_bn_stats) {
        *srefs[i].tensor = *orefs[i].tensor;  // copy mode
      } else {
        ema_blend(*srefs[i].tensor, *orefs[i].tensor, shadow.momentum);
      }
    }
  };
  blend_mlp(shadow.encoder, online.encoder);
  blend_mlp(shadow.projector, online.projector);
}

ModelParams init_params(const EncoderConfig& enc, const ProjectorConfig& proj,
                        const PredictorConfig& pred, ClassifierMode mode,
                        std::size_t num_classes, std::uint64_t seed) {
  enc.validate();
  if (proj.hidden_layers == 0 && proj.bottleneck_dim != enc.output_dim)
    throw std::invalid_argument("init_params: identity projector requires d_b == d");
  if (mode == ClassifierMode::FrozenOrthogonal && num_classes > proj.bottleneck_dim)
    throw std::invalid_argument("init_params: frozen orthogonal classifier needs C <= d_b");

  ModelParams p;
  p.encoder_cfg = enc;
  p.projector_cfg = proj;
  p.predictor_cfg = pred;
  p.classifier_mode = mode;
  p.num_classes = num_classes;

  Rng rng(Rng::derive(seed, 0x9a9a));
  std::size_t in = enc.pool_grid * enc.pool_grid * 3;
  for (std::size_t w : enc.hidden_widths) {
    p.encoder.blocks.push_back(make_linear(in, w, enc.use_batchnorm, /*gelu=*/true, rng));
    in = w;
  }
  // The output stage is activated too: the transferable representation is a
  // post-activation feature vector, like a pooled trunk output.
  p.encoder.blocks.push_back(make_linear(in, enc.output_dim, enc.use_batchnorm, true, rng));

  if (proj.hidden_layers > 0) {
    in = enc.output_dim;
    for (std::size_t l = 0; l < proj.hidden_layers; ++l) {
      p.projector.blocks.push_back(make_linear(in, proj.hidden_dim, true, true, rng));
      in = proj.hidden_dim;
    }
    p.projector.blocks.push_back(make_linear(in, proj.bottleneck_dim, false, false, rng));
  }

  if (pred.enabled) {
    p.predictor.blocks.push_back(make_linear(proj.bottleneck_dim, pred.inner_dim, true, true, rng));
    p.predictor.blocks.push_back(make_linear(pred.inner_dim, proj.bottleneck_dim, false, false, rng));
  }

  if (mode == ClassifierMode::Learned) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(proj.bottleneck_dim));
    p.class_weights = Tensor({num_classes, proj.bottleneck_dim});
    for (double& v : p.class_weights.data()) v = rng.uniform(-bound, bound);
  } else if (mode == ClassifierMode::FrozenOrthogonal) {
    p.class_weights = Tensor({num_classes, proj.bottleneck_dim});
    for (double& v : p.class_weights.data()) v = rng.normal();
    // Two passes of modified Gram-Schmidt over the rows.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t r = 0; r < num_classes; ++r) {
        auto row = p.class_weights.row(r);
        for (std::size_t o = 0; o < r; ++o) {
          const double proj_coef = dot(p.class_weights.row(o), row);
          auto prev = p.class_weights.row(o);
          for (std::size_t k = 0; k < row.size(); ++k) row[k] -= proj_coef * prev[k];
        }
        const double nrm = l2_norm(row);
        if (nrm < 1e-12)
          throw std::runtime_error("init_params: degenerate sample while orthogonalizing");
        for (double& v : row) v /= nrm;
      }
    }
  }
  for (auto& r : all_params(p))
    if (is_trainable(r.kind)) quantize(*r.tensor);
  return p;
}

}  // namespace trex
