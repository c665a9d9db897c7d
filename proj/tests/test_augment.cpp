// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "trex/augment.hpp"

using trex::AugImage;
using trex::AugmentConfig;
using trex::CropSet;
using trex::Rng;

namespace {

struct F64Mode {
  F64Mode() { trex::set_numeric_mode(trex::NumericMode::f64); }
};
F64Mode f64_mode;

AugImage gradient_image(std::size_t h, std::size_t w) {
  AugImage img{h, w, std::vector<double>(h * w * 3)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<double>(x) / static_cast<double>(w);
      img.at(y, x, 1) = static_cast<double>(y) / static_cast<double>(h);
      img.at(y, x, 2) = 0.5;
    }
  return img;
}

AugmentConfig quiet_config() {
  AugmentConfig cfg;
  trex::apply_preset(cfg);
  auto mute = [](trex::BranchOps& ops) {
    ops.flip_prob = 0.0;
    ops.jitter.probability = 0.0;
    ops.grayscale_prob = 0.0;
    ops.blur_prob = 0.0;
    ops.solarize_prob = 0.0;
  };
  mute(cfg.global_ops);
  mute(cfg.local_ops);
  return cfg;
}

}  // namespace

TEST_CASE("crop geometry respects the scale range within one-pixel rounding") {
  const std::size_t H = 32, W = 32;
  struct Case {
    trex::ScaleRange range;
  } cases[] = {{{0.05, 0.4}}, {{0.4, 1.0}}};
  for (const auto& c : cases) {
    Rng rng(99);
    for (int draw = 0; draw < 1000; ++draw) {
      auto g = trex::sample_crop_geometry(H, W, c.range, rng);
      const double ratio = static_cast<double>(g.height * g.width) / static_cast<double>(H * W);
      const double delta =
          (0.5 * static_cast<double>(g.height + g.width) + 0.25) / static_cast<double>(H * W);
      CHECK(ratio >= c.range.min - delta);
      CHECK(ratio <= c.range.max + delta);
      CHECK(g.x0 + g.width <= W);
      CHECK(g.y0 + g.height <= H);
    }
  }
}

TEST_CASE("degenerate scale range on a square image returns the full image") {
  AugImage img = gradient_image(16, 16);
  Rng rng(3);
  auto g = trex::sample_crop_geometry(16, 16, {1.0, 1.0}, rng);
  CHECK(g.width == 16);
  CHECK(g.height == 16);
  CHECK(g.x0 == 0);
  CHECK(g.y0 == 0);
}

TEST_CASE("multi_crop produces the configured counts and shapes") {
  AugImage img = gradient_image(32, 32);
  AugmentConfig cfg;
  trex::apply_preset(cfg);
  cfg.n_global = 1;
  cfg.n_local = 8;
  CropSet crops = trex::multi_crop(img, cfg, 7);
  CHECK(crops.globals.size() == 1);
  CHECK(crops.locals.size() == 8);
  CHECK(crops.globals[0].shape() ==
        std::vector<std::size_t>{cfg.global_resolution * cfg.global_resolution, 3});
  CHECK(crops.locals[0].shape() ==
        std::vector<std::size_t>{cfg.local_resolution * cfg.local_resolution, 3});
}

TEST_CASE("all ops off with unit scale yields a pure resize") {
  AugImage img = gradient_image(32, 32);
  AugmentConfig cfg = quiet_config();
  cfg.global_scale = {1.0, 1.0};
  cfg.local_scale = {1.0, 1.0};
  cfg.n_global = 1;
  cfg.n_local = 1;
  CropSet crops = trex::multi_crop(img, cfg, 11);

  AugImage resized = trex::resize_bilinear(img, cfg.global_resolution, cfg.global_resolution);
  for (std::size_t i = 0; i < cfg.global_resolution * cfg.global_resolution; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double expect = (resized.pixels[i * 3 + c] - cfg.norm_mean[c]) / cfg.norm_std[c];
      CHECK(crops.globals[0].at(i, c) == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("same seed gives bit-identical crop sets") {
  AugImage img = gradient_image(24, 24);
  AugmentConfig cfg;
  trex::apply_preset(cfg);
  cfg.n_local = 4;
  CropSet a = trex::multi_crop(img, cfg, 1234);
  CropSet b = trex::multi_crop(img, cfg, 1234);
  REQUIRE(a.globals.size() == b.globals.size());
  for (std::size_t i = 0; i < a.globals.size(); ++i)
    for (std::size_t k = 0; k < a.globals[i].size(); ++k)
      CHECK(a.globals[i][k] == b.globals[i][k]);
  for (std::size_t i = 0; i < a.locals.size(); ++i)
    for (std::size_t k = 0; k < a.locals[i].size(); ++k) CHECK(a.locals[i][k] == b.locals[i][k]);

  CropSet c = trex::multi_crop(img, cfg, 1235);
  bool any_diff = false;
  for (std::size_t k = 0; k < a.globals[0].size() && !any_diff; ++k)
    any_diff = a.globals[0][k] != c.globals[0][k];
  CHECK(any_diff);
}

TEST_CASE("single-pytorch preset is one flip-only crop with scale 0.08..1") {
  AugmentConfig cfg;
  cfg.preset = trex::Preset::SinglePytorch;
  trex::apply_preset(cfg);
  CHECK(cfg.n_global == 1);
  CHECK(cfg.n_local == 0);
  CHECK(cfg.global_scale.min == doctest::Approx(0.08));
  CHECK(cfg.global_scale.max == doctest::Approx(1.0));
  CHECK(cfg.global_ops.flip_prob == doctest::Approx(0.5));
  CHECK(cfg.global_ops.jitter.probability == 0.0);
  CHECK(cfg.global_ops.grayscale_prob == 0.0);
  CHECK(cfg.global_ops.blur_prob == 0.0);
  CHECK(cfg.global_ops.solarize_prob == 0.0);

  AugImage img = gradient_image(20, 20);
  CropSet crops = trex::multi_crop(img, cfg, 5);
  CHECK(crops.globals.size() == 1);
  CHECK(crops.locals.empty());
}

TEST_CASE("solarization stays on the global branch in the dino preset") {
  AugmentConfig cfg;
  cfg.preset = trex::Preset::MultiCropDino;
  trex::apply_preset(cfg);
  CHECK(cfg.global_ops.solarize_prob == doctest::Approx(0.2));
  CHECK(cfg.local_ops.solarize_prob == 0.0);

  // Behavioral check: force solarize on the global branch only.
  AugmentConfig forced = quiet_config();
  forced.global_scale = {1.0, 1.0};
  forced.local_scale = {1.0, 1.0};
  forced.n_global = 1;
  forced.n_local = 1;
  forced.global_ops.solarize_prob = 1.0;

  AugImage bright{4, 4, std::vector<double>(4 * 4 * 3, 0.9)};
  CropSet crops = trex::multi_crop(bright, forced, 2);
  // global crop got inverted (0.9 -> 0.1), local did not
  const double g = crops.globals[0].at(0, 0) * forced.norm_std[0] + forced.norm_mean[0];
  const double l = crops.locals[0].at(0, 0) * forced.norm_std[0] + forced.norm_mean[0];
  CHECK(g == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(l == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("eval_transform geometry and determinism") {
  AugmentConfig cfg;
  // square image of exactly short_side: unchanged up to normalization
  AugImage img = gradient_image(16, 16);
  trex::Tensor t = trex::eval_transform(img, 16, cfg.norm_mean, cfg.norm_std);
  for (std::size_t i = 0; i < 16 * 16; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(t.at(i, c) ==
            doctest::Approx((img.pixels[i * 3 + c] - cfg.norm_mean[c]) / cfg.norm_std[c])
                .epsilon(1e-9));

  // 2:1 landscape: resized to height 16, center 16x16 window
  AugImage wide = gradient_image(16, 32);
  trex::Tensor tw = trex::eval_transform(wide, 16, cfg.norm_mean, cfg.norm_std);
  CHECK(tw.shape() == std::vector<std::size_t>{16 * 16, 3});
  // the horizontal gradient is centered: mean of channel 0 near 0.5 pre-normalization
  double mean_x = 0.0;
  for (std::size_t i = 0; i < 16 * 16; ++i)
    mean_x += tw.at(i, 0) * cfg.norm_std[0] + cfg.norm_mean[0];
  mean_x /= 256.0;
  CHECK(mean_x == doctest::Approx(0.484).epsilon(0.05));

  trex::Tensor tw2 = trex::eval_transform(wide, 16, cfg.norm_mean, cfg.norm_std);
  for (std::size_t i = 0; i < tw.size(); ++i) CHECK(tw[i] == tw2[i]);
}
