// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_AUGMENT_HPP
#define TREX_AUGMENT_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "trex/common.hpp"
#include "trex/dataio.hpp"
#include "trex/numkit.hpp"

namespace trex {

/// Working image for the augmentation pipeline: H x W x 3, values in [0,1]
/// until the normalization stage.
struct AugImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // HWC

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
};

AugImage to_aug_image(const Dataset& ds, std::size_t index);

struct ScaleRange {
  double min = 0.0;
  double max = 1.0;
};

struct JitterParams {
  double probability = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double hue = 0.1;
};

/// Stochastic op chain applied to one crop branch.
struct BranchOps {
  double flip_prob = 0.5;
  JitterParams jitter;
  double grayscale_prob = 0.2;
  double blur_prob = 0.2;
  double blur_radius_min = 0.1;
  double blur_radius_max = 2.0;
  double solarize_prob = 0.2;            // global branch only in the dino preset
  double solarize_threshold = 128.0 / 255.0;
};

enum class Preset { MultiCropDino, SinglePytorch, SingleSimsiam };

std::string preset_name(Preset p);
Preset preset_from_name(const std::string& s);

struct AugmentConfig {
  Preset preset = Preset::MultiCropDino;
  ScaleRange global_scale{0.4, 1.0};
  ScaleRange local_scale{0.05, 0.4};
  std::size_t global_resolution = 32;  // desk scale; the reference setup uses 224/96
  std::size_t local_resolution = 16;
  std::size_t n_global = 1;
  std::size_t n_local = 8;
  BranchOps global_ops;
  BranchOps local_ops;
  std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
  std::array<double, 3> norm_std{0.229, 0.224, 0.225};

  void validate() const;
};

/// Fills branch ops and crop counts for the named preset, keeping resolutions.
void apply_preset(AugmentConfig& cfg);

/// Per-image multi-crop output. Crop tensors have shape (res*res, 3).
struct CropSet {
  std::vector<Tensor> globals;
  std::vector<Tensor> locals;
  std::size_t source_index = 0;
};

struct CropGeometry {
  std::size_t y0 = 0, x0 = 0;
  std::size_t height = 0, width = 0;
};

/// Samples the pre-resize crop box: area fraction in [scale.min, scale.max]
/// (within one-pixel rounding), aspect ratio in [3/4, 4/3]. Falls back to a
/// scale-respecting center crop after 10 failed attempts.
CropGeometry sample_crop_geometry(std::size_t img_h, std::size_t img_w, ScaleRange scale,
                                  Rng& rng);

/// Random crop per sample_crop_geometry, resized to out_size x out_size by
/// bilinear interpolation.
AugImage random_resized_crop(const AugImage& img, ScaleRange scale, std::size_t out_size,
                             Rng& rng);

/// Runs the configured pipeline. Per-crop streams are derived from `seed`, so
/// the result is a pure function of (image, config, seed).
CropSet multi_crop(const AugImage& img, const AugmentConfig& cfg, std::uint64_t seed);

/// Deterministic eval-time transform: resize so the shorter side equals
/// short_side, center crop, normalize. Output shape (short_side^2, 3).
Tensor eval_transform(const AugImage& img, std::size_t short_side,
                      const std::array<double, 3>& mean, const std::array<double, 3>& std);

// Individual ops, exposed for tests.
AugImage resize_bilinear(const AugImage& img, std::size_t out_h, std::size_t out_w);
void flip_horizontal(AugImage& img);
void color_jitter(AugImage& img, const JitterParams& p, Rng& rng);
void grayscale(AugImage& img);
void gaussian_blur(AugImage& img, double radius);
void solarize(AugImage& img, double threshold);

}  // namespace trex

#endif  // TREX_AUGMENT_HPP
