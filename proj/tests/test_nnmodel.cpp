// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "trex/nnmodel.hpp"

using trex::ModelParams;
using trex::Tensor;

namespace {
struct F64Mode {
  F64Mode() { trex::set_numeric_mode(trex::NumericMode::f64); }
};
F64Mode f64_mode;

ModelParams tiny_model(std::uint64_t seed, bool input_l2 = true, std::size_t proj_layers = 1) {
  trex::EncoderConfig enc;
  enc.pool_grid = 2;
  enc.hidden_widths = {5};
  enc.output_dim = 6;
  trex::ProjectorConfig proj;
  proj.hidden_layers = proj_layers;
  proj.hidden_dim = 7;
  proj.bottleneck_dim = proj_layers == 0 ? 6 : 4;
  proj.input_l2 = input_l2;
  trex::PredictorConfig pred;
  return trex::init_params(enc, proj, pred, trex::ClassifierMode::Learned, 3, seed);
}

}  // namespace

TEST_CASE("gelu sanity") {
  CHECK(trex::gelu(0.0) == 0.0);
  CHECK(trex::gelu(8.0) == doctest::Approx(8.0).epsilon(1e-9));
  CHECK(trex::gelu(-8.0) == doctest::Approx(0.0).epsilon(1e-9));
  // derivative agrees with finite differences
  for (double x : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
    double xx = x;
    const double fd = oracles::central_diff([&] { return trex::gelu(xx); }, &xx, 1e-6);
    CHECK(trex::gelu_grad(x) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("forward output is unit-norm and identity projector normalizes x") {
  trex::Rng rng(31);
  ModelParams m = tiny_model(4);
  Tensor batch = oracles::random_tensor({3, 8 * 8 * 3}, rng);
  auto fwd = trex::forward(m, batch, 8, trex::RunMode::Train, false);
  for (std::size_t r = 0; r < fwd.z.rows(); ++r)
    CHECK(trex::l2_norm(fwd.z.row(r)) == doctest::Approx(1.0).epsilon(1e-6));

  ModelParams id = tiny_model(4, /*input_l2=*/false, /*proj_layers=*/0);
  auto fid = trex::forward(id, batch, 8, trex::RunMode::Train, false);
  for (std::size_t r = 0; r < fid.z.rows(); ++r) {
    Tensor x({fid.x.cols()});
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = fid.x.at(r, k);
    Tensor nx = trex::l2_normalize(x);
    for (std::size_t k = 0; k < x.size(); ++k)
      CHECK(fid.z.at(r, k) == doctest::Approx(nx[k]).epsilon(1e-9));
  }
}

TEST_CASE("gradients match central finite differences for every loss kind") {
  for (auto kind : {trex::LossKind::CosineCe, trex::LossKind::VanillaCe, trex::LossKind::Ocm,
                    trex::LossKind::Oca}) {
    auto res = gradcheck::run(100 + static_cast<int>(kind), kind, false);
    INFO("kind=", trex::loss_kind_name(kind), " worst=", res.worst);
    CHECK(res.ok);
  }
  for (auto kind : {trex::LossKind::Ocm, trex::LossKind::Oca}) {
    auto res = gradcheck::run(200 + static_cast<int>(kind), kind, true);
    INFO("kind=", trex::loss_kind_name(kind), " predictor on, worst=", res.worst);
    CHECK(res.ok);
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  trex::Rng rng(37);
  ModelParams m = tiny_model(5);
  Tensor batch = oracles::random_tensor({2, 8 * 8 * 3}, rng);
  auto fwd = trex::forward(m, batch, 8, trex::RunMode::Train, false);
  Tensor gz({fwd.z.rows(), fwd.z.cols()});
  auto grads = trex::backward(m, fwd.cache, gz);
  for (const auto& t : grads.tensors)
    for (double v : t.data()) CHECK(v == 0.0);
}

TEST_CASE("gradient parallel to a normalized output vanishes") {
  // identity projector, no input l2: z = x / |x|, so grad_z parallel to z is
  // in the normalization null space and nothing reaches the parameters
  trex::Rng rng(41);
  ModelParams m = tiny_model(6, /*input_l2=*/false, /*proj_layers=*/0);
  Tensor batch = oracles::random_tensor({2, 8 * 8 * 3}, rng);
  auto fwd = trex::forward(m, batch, 8, trex::RunMode::Train, false);
  Tensor gz = fwd.z;  // parallel to z row by row
  auto grads = trex::backward(m, fwd.cache, gz);
  for (const auto& t : grads.tensors)
    for (double v : t.data()) CHECK(std::abs(v) <= 1e-10);
}

TEST_CASE("backward requires a train-mode cache") {
  trex::Rng rng(43);
  ModelParams m = tiny_model(7);
  Tensor batch = oracles::random_tensor({2, 8 * 8 * 3}, rng);
  auto fwd = trex::forward(m, batch, 8, trex::RunMode::Eval, false);
  Tensor gz({fwd.z.rows(), fwd.z.cols()});
  CHECK_THROWS_AS(trex::backward(m, fwd.cache, gz), std::invalid_argument);
}

TEST_CASE("non-finite activations raise a numeric fault with the layer") {
  trex::Rng rng(47);
  ModelParams m = tiny_model(8);
  m.encoder.blocks[0].weight[0] = std::numeric_limits<double>::quiet_NaN();
  Tensor batch = oracles::random_tensor({2, 8 * 8 * 3}, rng);
  CHECK_THROWS_WITH_AS(trex::forward(m, batch, 8, trex::RunMode::Train, false),
                       doctest::Contains("encoder block 0"), std::runtime_error);
}

TEST_CASE("ema update arithmetic") {
  ModelParams m = tiny_model(9);
  trex::EmaShadow shadow = trex::make_ema_shadow(m, 0.0, true);
  // m = 0: shadow tracks online exactly
  m.encoder.blocks[0].weight[0] = 2.5;
  trex::ema_update(shadow, m);
  CHECK(shadow.encoder.blocks[0].weight[0] == doctest::Approx(2.5));

  // m = 1: shadow never moves
  trex::EmaShadow frozen = trex::make_ema_shadow(m, 1.0, true);
  const double before = frozen.encoder.blocks[0].weight[0];
  m.encoder.blocks[0].weight[0] = -10.0;
  trex::ema_update(frozen, m);
  CHECK(frozen.encoder.blocks[0].weight[0] == before);

  // one step of m = 0.999 from 0 toward 1
  ModelParams online = tiny_model(10);
  trex::EmaShadow s = trex::make_ema_shadow(online, 0.999, true);
  s.encoder.blocks[0].weight[0] = 0.0;
  online.encoder.blocks[0].weight[0] = 1.0;
  trex::ema_update(s, online);
  CHECK(s.encoder.blocks[0].weight[0] == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("ema batch-norm statistics follow the averaging flag") {
  ModelParams m = tiny_model(11);
  trex::EmaShadow averaged = trex::make_ema_shadow(m, 0.5, true);
  trex::EmaShadow copied = trex::make_ema_shadow(m, 0.5, false);
  averaged.encoder.blocks[0].bn->running_mean[0] = 0.0;
  copied.encoder.blocks[0].bn->running_mean[0] = 0.0;
  m.encoder.blocks[0].bn->running_mean[0] = 1.0;
  trex::ema_update(averaged, m);
  trex::ema_update(copied, m);
  CHECK(averaged.encoder.blocks[0].bn->running_mean[0] == doctest::Approx(0.5));
  CHECK(copied.encoder.blocks[0].bn->running_mean[0] == doctest::Approx(1.0));
}

TEST_CASE("init_params determinism and classifier modes") {
  ModelParams a = tiny_model(12);
  ModelParams b = tiny_model(12);
  auto ra = trex::all_params(a);
  auto rb = trex::all_params(b);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i)
    for (std::size_t k = 0; k < ra[i].tensor->size(); ++k)
      CHECK((*ra[i].tensor)[k] == (*rb[i].tensor)[k]);

  // learned rows are non-zero
  for (std::size_t c = 0; c < a.class_weights.rows(); ++c)
    CHECK(trex::l2_norm(a.class_weights.row(c)) > 0.0);

  // frozen orthogonal: W W^T = I
  trex::EncoderConfig enc;
  enc.pool_grid = 2;
  enc.hidden_widths = {5};
  enc.output_dim = 6;
  trex::ProjectorConfig proj;
  proj.hidden_layers = 1;
  proj.hidden_dim = 7;
  proj.bottleneck_dim = 8;
  trex::PredictorConfig pred;
  ModelParams orth =
      trex::init_params(enc, proj, pred, trex::ClassifierMode::FrozenOrthogonal, 5, 13);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double v = trex::dot(orth.class_weights.row(i), orth.class_weights.row(j));
      CHECK(std::abs(v - (i == j ? 1.0 : 0.0)) <= 1e-5);
    }

  // C > d_b is rejected in orthogonal mode
  proj.bottleneck_dim = 3;
  CHECK_THROWS_AS(
      trex::init_params(enc, proj, pred, trex::ClassifierMode::FrozenOrthogonal, 5, 13),
      std::invalid_argument);
}

TEST_CASE("eval-mode forward is batch-size independent") {
  trex::Rng rng(53);
  ModelParams m = tiny_model(14);
  // move the running stats off init so eval actually uses them
  Tensor warm = oracles::random_tensor({8, 8 * 8 * 3}, rng);
  (void)trex::forward(m, warm, 8, trex::RunMode::Train, true);

  Tensor batch = oracles::random_tensor({16, 8 * 8 * 3}, rng);
  auto full = trex::forward(m, batch, 8, trex::RunMode::Eval, false);
  Tensor one({1, 8 * 8 * 3});
  for (std::size_t k = 0; k < one.cols(); ++k) one.at(0, k) = batch.at(3, k);
  auto single = trex::forward(m, one, 8, trex::RunMode::Eval, false);
  for (std::size_t k = 0; k < full.z.cols(); ++k)
    CHECK(single.z.at(0, k) == doctest::Approx(full.z.at(3, k)).epsilon(1e-6));
}

TEST_CASE("encoder accepts any resolution through adaptive pooling") {
  trex::Rng rng(59);
  ModelParams m = tiny_model(15);
  for (std::size_t res : {8, 16, 32}) {
    Tensor batch = oracles::random_tensor({2, res * res * 3}, rng);
    auto fwd = trex::forward(m, batch, res, trex::RunMode::Train, false);
    CHECK(fwd.x.cols() == 6);
    CHECK(fwd.z.cols() == 4);
  }
}

TEST_CASE("adaptive pooling averages blocks exactly") {
  Tensor batch({1, 4 * 4 * 3});
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t c = 0; c < 3; ++c) batch.at(0, p * 3 + c) = static_cast<double>(p);
  Tensor pooled = trex::adaptive_pool(batch, 4, 2);
  // top-left 2x2 block holds pixels {0,1,4,5} -> mean 2.5
  CHECK(pooled.at(0, 0) == doctest::Approx(2.5));
  // bottom-right block {10,11,14,15} -> mean 12.5
  CHECK(pooled.at(0, 3 * 3 + 0) == doctest::Approx(12.5));
}
