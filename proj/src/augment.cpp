// SPDX-License-Identifier: Apache-2.0

#include "trex/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trex {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAspectMin = 3.0 / 4.0;
constexpr double kAspectMax = 4.0 / 3.0;

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

AugImage crop(const AugImage& img, std::size_t y0, std::size_t x0, std::size_t h,
              std::size_t w) {
  AugImage out{h, w, std::vector<double>(h * w * 3)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx == 0.0 ? 0.0 : d / mx;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = (g - b) / d;
    if (h < 0.0) h += 6.0;
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  h /= 6.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void apply_branch(AugImage& img, const BranchOps& ops, Rng& rng) {
  if (rng.uniform() < ops.flip_prob) flip_horizontal(img);
  if (rng.uniform() < ops.jitter.probability) color_jitter(img, ops.jitter, rng);
  if (rng.uniform() < ops.grayscale_prob) grayscale(img);
  if (rng.uniform() < ops.blur_prob)
    gaussian_blur(img, rng.uniform(ops.blur_radius_min, ops.blur_radius_max));
  if (rng.uniform() < ops.solarize_prob) solarize(img, ops.solarize_threshold);
}

Tensor to_tensor(const AugImage& img, const std::array<double, 3>& mean,
                 const std::array<double, 3>& std) {
  Tensor t({img.height * img.width, 3});
  for (std::size_t i = 0; i < img.height * img.width; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      t.at(i, c) = (img.pixels[i * 3 + c] - mean[c]) / std[c];
  quantize(t);
  return t;
}

Tensor make_crop(const AugImage& img, const BranchOps& ops, ScaleRange scale,
                 std::size_t resolution, const AugmentConfig& cfg, Rng& rng) {
  AugImage c = random_resized_crop(img, scale, resolution, rng);
  apply_branch(c, ops, rng);
  return to_tensor(c, cfg.norm_mean, cfg.norm_std);
}

}  // namespace

AugImage to_aug_image(const Dataset& ds, std::size_t index) {
  AugImage img{ds.height, ds.width, std::vector<double>(ds.height * ds.width * 3)};
  const float* src = ds.image_data(index);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = src[i];
  return img;
}

std::string preset_name(Preset p) {
  switch (p) {
    case Preset::MultiCropDino: return "multi-crop-dino";
    case Preset::SinglePytorch: return "single-pytorch";
    default: return "single-simsiam";
  }
}

Preset preset_from_name(const std::string& s) {
  if (s == "multi-crop-dino") return Preset::MultiCropDino;
  if (s == "single-pytorch") return Preset::SinglePytorch;
  if (s == "single-simsiam") return Preset::SingleSimsiam;
  throw std::invalid_argument("unknown augmentation preset: " + s);
}

void AugmentConfig::validate() const {
  auto check_scale = [](ScaleRange r, const char* which) {
    if (!(r.min > 0.0 && r.min <= r.max && r.max <= 1.0))
      throw std::invalid_argument(std::string("augment: invalid ") + which + " scale range");
  };
  check_scale(global_scale, "global");
  check_scale(local_scale, "local");
  if (n_global < 1) throw std::invalid_argument("augment: need at least one global crop");
  if (global_resolution < 2 || local_resolution < 2)
    throw std::invalid_argument("augment: resolutions must be >= 2");
}

void apply_preset(AugmentConfig& cfg) {
  switch (cfg.preset) {
    case Preset::MultiCropDino:
      cfg.global_ops = BranchOps{};
      cfg.local_ops = BranchOps{};
      cfg.local_ops.solarize_prob = 0.0;  // solarization stays on the global branch
      break;
    case Preset::SinglePytorch:
      cfg.n_global = 1;
      cfg.n_local = 0;
      cfg.global_scale = {0.08, 1.0};
      cfg.global_ops = BranchOps{};
      cfg.global_ops.jitter.probability = 0.0;
      cfg.global_ops.grayscale_prob = 0.0;
      cfg.global_ops.blur_prob = 0.0;
      cfg.global_ops.solarize_prob = 0.0;
      break;
    case Preset::SingleSimsiam:
      cfg.n_global = 1;
      cfg.n_local = 0;
      cfg.global_scale = {0.2, 1.0};
      cfg.global_ops = BranchOps{};
      cfg.global_ops.jitter = JitterParams{0.8, 0.4, 0.4, 0.4, 0.1};
      cfg.global_ops.blur_prob = 0.5;
      cfg.global_ops.solarize_prob = 0.0;
      break;
  }
}

AugImage resize_bilinear(const AugImage& img, std::size_t out_h, std::size_t out_w) {
  AugImage out{out_h, out_w, std::vector<double>(out_h * out_w * 3)};
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        const double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

void flip_horizontal(AugImage& img) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width / 2; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
}

void color_jitter(AugImage& img, const JitterParams& p, Rng& rng) {
  const double fb = rng.uniform(std::max(0.0, 1.0 - p.brightness), 1.0 + p.brightness);
  const double fc = rng.uniform(std::max(0.0, 1.0 - p.contrast), 1.0 + p.contrast);
  const double fs = rng.uniform(std::max(0.0, 1.0 - p.saturation), 1.0 + p.saturation);
  const double fh = rng.uniform(-p.hue, p.hue);

  const std::size_t n = img.height * img.width;
  for (std::size_t i = 0; i < n * 3; ++i) img.pixels[i] = clamp01(img.pixels[i] * fb);

  double mean_gray = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    mean_gray += luma(img.pixels[i * 3], img.pixels[i * 3 + 1], img.pixels[i * 3 + 2]);
  mean_gray /= static_cast<double>(n);
  for (std::size_t i = 0; i < n * 3; ++i)
    img.pixels[i] = clamp01(fc * img.pixels[i] + (1.0 - fc) * mean_gray);

  for (std::size_t i = 0; i < n; ++i) {
    const double l = luma(img.pixels[i * 3], img.pixels[i * 3 + 1], img.pixels[i * 3 + 2]);
    for (std::size_t c = 0; c < 3; ++c)
      img.pixels[i * 3 + c] = clamp01(fs * img.pixels[i * 3 + c] + (1.0 - fs) * l);
  }

  if (p.hue > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      double h, s, v;
      rgb_to_hsv(img.pixels[i * 3], img.pixels[i * 3 + 1], img.pixels[i * 3 + 2], h, s, v);
      hsv_to_rgb(h + fh, s, v, img.pixels[i * 3], img.pixels[i * 3 + 1],
                 img.pixels[i * 3 + 2]);
    }
  }
}

void grayscale(AugImage& img) {
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    const double l = luma(img.pixels[i * 3], img.pixels[i * 3 + 1], img.pixels[i * 3 + 2]);
    img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = l;
  }
}

void gaussian_blur(AugImage& img, double radius) {
  const double sigma = std::max(radius, 1e-6);
  const std::size_t half = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(3.0 * sigma)));
  std::vector<double> w(2 * half + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(half);
    w[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;

  const auto sample = [](std::size_t n, long i) {
    return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1));
  };
  AugImage tmp = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k)
          acc += w[k] * img.at(y, sample(img.width, static_cast<long>(x + k) - static_cast<long>(half)), c);
        tmp.at(y, x, c) = acc;
      }
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k)
          acc += w[k] * tmp.at(sample(img.height, static_cast<long>(y + k) - static_cast<long>(half)), x, c);
        img.at(y, x, c) = acc;
      }
}

void solarize(AugImage& img, double threshold) {
  for (double& v : img.pixels)
    if (v >= threshold) v = 1.0 - v;
}

CropGeometry sample_crop_geometry(std::size_t img_h, std::size_t img_w, ScaleRange scale,
                                  Rng& rng) {
  if (img_h < 2 || img_w < 2)
    throw std::invalid_argument("sample_crop_geometry: image must be at least 2x2");
  const double area = static_cast<double>(img_h * img_w);

  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target_area = rng.uniform(scale.min, scale.max) * area;
    const double aspect = std::exp(rng.uniform(std::log(kAspectMin), std::log(kAspectMax)));
    const long w = std::lround(std::sqrt(target_area * aspect));
    const long h = std::lround(std::sqrt(target_area / aspect));
    if (w >= 1 && h >= 1 && w <= static_cast<long>(img_w) && h <= static_cast<long>(img_h)) {
      CropGeometry g;
      g.width = static_cast<std::size_t>(w);
      g.height = static_cast<std::size_t>(h);
      g.x0 = rng.uniform_int(img_w - g.width + 1);
      g.y0 = rng.uniform_int(img_h - g.height + 1);
      return g;
    }
  }

  // Fallback: largest centered crop that still respects both ranges.
  const double aspect =
      std::clamp(static_cast<double>(img_w) / static_cast<double>(img_h), kAspectMin, kAspectMax);
  double a = std::min({scale.max * area,
                       static_cast<double>(img_w) * static_cast<double>(img_w) / aspect,
                       static_cast<double>(img_h) * static_cast<double>(img_h) * aspect});
  a = std::max(a, 1.0);
  CropGeometry g;
  g.width = static_cast<std::size_t>(
      std::clamp<long>(std::lround(std::sqrt(a * aspect)), 1, static_cast<long>(img_w)));
  g.height = static_cast<std::size_t>(
      std::clamp<long>(std::lround(std::sqrt(a / aspect)), 1, static_cast<long>(img_h)));
  g.y0 = (img_h - g.height) / 2;
  g.x0 = (img_w - g.width) / 2;
  return g;
}

AugImage random_resized_crop(const AugImage& img, ScaleRange scale, std::size_t out_size,
                             Rng& rng) {
  if (out_size < 2) throw std::invalid_argument("random_resized_crop: out_size must be >= 2");
  const CropGeometry g = sample_crop_geometry(img.height, img.width, scale, rng);
  AugImage c = crop(img, g.y0, g.x0, g.height, g.width);
  return resize_bilinear(c, out_size, out_size);
}

CropSet multi_crop(const AugImage& img, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CropSet out;
  out.globals.reserve(cfg.n_global);
  out.locals.reserve(cfg.n_local);
  for (std::size_t i = 0; i < cfg.n_global; ++i) {
    Rng rng(Rng::derive(seed, i));
    out.globals.push_back(
        make_crop(img, cfg.global_ops, cfg.global_scale, cfg.global_resolution, cfg, rng));
  }
  for (std::size_t i = 0; i < cfg.n_local; ++i) {
    Rng rng(Rng::derive(seed, cfg.n_global + i));
    out.locals.push_back(
        make_crop(img, cfg.local_ops, cfg.local_scale, cfg.local_resolution, cfg, rng));
  }
  return out;
}

Tensor eval_transform(const AugImage& img, std::size_t short_side,
                      const std::array<double, 3>& mean, const std::array<double, 3>& std) {
  if (short_side < 2) throw std::invalid_argument("eval_transform: short_side must be >= 2");
  std::size_t new_h, new_w;
  if (img.height <= img.width) {
    new_h = short_side;
    new_w = std::max<std::size_t>(
        short_side, static_cast<std::size_t>(std::lround(
                        static_cast<double>(img.width) * static_cast<double>(short_side) /
                        static_cast<double>(img.height))));
  } else {
    new_w = short_side;
    new_h = std::max<std::size_t>(
        short_side, static_cast<std::size_t>(std::lround(
                        static_cast<double>(img.height) * static_cast<double>(short_side) /
                        static_cast<double>(img.width))));
  }
  AugImage resized = resize_bilinear(img, new_h, new_w);
  AugImage center =
      crop(resized, (new_h - short_side) / 2, (new_w - short_side) / 2, short_side, short_side);
  return to_tensor(center, mean, std);
}

}  // namespace trex
