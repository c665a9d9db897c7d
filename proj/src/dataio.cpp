// SPDX-License-Identifier: Apache-2.0

#include "trex/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace trex {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'X', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("load_trxd: truncated file reading ") + what);
  return v;
}

double frac(double x) { return x - std::floor(x); }

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = frac(h) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

bool inside_shape(std::uint32_t shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::max(std::abs(dx), std::abs(dy)) <= 0.9 * r;
    case 2: {  // upward triangle via three half-plane tests
      const double x0 = 0.0, y0 = -r;
      const double x1 = -0.87 * r, y1 = 0.5 * r;
      const double x2 = 0.87 * r, y2 = 0.5 * r;
      auto side = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
      };
      const double s0 = side(x0, y0, x1, y1);
      const double s1 = side(x1, y1, x2, y2);
      const double s2 = side(x2, y2, x0, y0);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
    default: {  // ring
      const double d2 = dx * dx + dy * dy;
      return d2 >= 0.55 * 0.55 * r * r && d2 <= r * r;
    }
  }
}

void render_sample(const SyntheticSpec& spec, const ClassTriple& triple, Rng& rng, float* out) {
  const std::size_t s = spec.image_size;
  const double sd = static_cast<double>(s);

  const double hue_center = frac((triple.hue_band + 0.5) * 0.61803398874989485);
  const double hue = frac(hue_center + 0.04 * (rng.uniform() - 0.5));
  const double sat = 0.65 + 0.25 * rng.uniform();
  const double val = 0.75 + 0.20 * rng.uniform();
  const double base_gray = 0.35 + 0.30 * rng.uniform();
  const double cx = sd * (0.5 + spec.position_jitter * (rng.uniform() - 0.5));
  const double cy = sd * (0.5 + spec.position_jitter * (rng.uniform() - 0.5));
  const double radius = sd * (0.22 + 0.22 * rng.uniform());
  const double stripe_angle = 3.14159265358979323846 * rng.uniform();
  const double stripe_phase = 6.28318530717958647692 * rng.uniform();
  const double cycles = 3.0 * static_cast<double>(triple.stripes);
  const double ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);

  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double dx = (static_cast<double>(x) + 0.5) - cx;
      const double dy = (static_cast<double>(y) + 0.5) - cy;
      double rgb[3];
      if (inside_shape(triple.shape, dx, dy, radius)) {
        double mod = 1.0;
        if (triple.stripes > 0) {
          const double proj = (dx * ca + dy * sa) / (2.0 * radius);
          mod = 0.75 + 0.25 * std::sin(6.28318530717958647692 * cycles * proj + stripe_phase);
        }
        hsv_to_rgb(hue, sat, val * mod, rgb);
      } else {
        const double g = base_gray + spec.background_noise * (rng.uniform() - 0.5);
        rgb[0] = rgb[1] = rgb[2] = g;
      }
      float* px = out + (y * s + x) * 3;
      for (int c = 0; c < 3; ++c)
        px[c] = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
    }
  }
}

}  // namespace

std::vector<std::size_t> Dataset::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split_tags.size(); ++i)
    if (split_tags[i] == static_cast<std::uint8_t>(s)) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (pixels.size() != size() * height * width * 3)
    throw std::runtime_error("Dataset: pixel buffer does not match N*H*W*3");
  if (split_tags.size() != size()) throw std::runtime_error("Dataset: split tag count mismatch");
  for (std::uint32_t l : labels)
    if (l >= num_classes) throw std::runtime_error("Dataset: label out of range");
  for (std::uint8_t t : split_tags)
    if (t > 2) throw std::runtime_error("Dataset: split tag out of range");
}

std::vector<ClassTriple> class_triples(const SyntheticSpec& spec) {
  if (spec.num_classes > 64)
    throw std::invalid_argument("class_triples: at most 64 classes per family offset");
  // 4 shapes x 4 hue bands x 4 stripe frequencies per offset; the shuffle is
  // keyed by the offset alone so class semantics are stable for a level.
  std::vector<std::uint32_t> ids(64);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(Rng::derive(0x7C1A55E5u, spec.family_offset));
  for (std::size_t i = ids.size() - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.uniform_int(i + 1)]);
  std::vector<ClassTriple> out(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const std::uint32_t id = ids[c];
    out[c] = ClassTriple{id / 16, 4 * spec.family_offset + (id / 4) % 4, id % 4};
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes == 0 || spec.image_size < 4)
    throw std::invalid_argument("generate_synthetic: invalid spec");
  const auto triples = class_triples(spec);

  Dataset ds;
  ds.name = spec.name;
  ds.height = ds.width = spec.image_size;
  ds.num_classes = spec.num_classes;
  const std::size_t per_class[3] = {spec.train_per_class, spec.val_per_class,
                                    spec.test_per_class};
  const std::size_t n =
      spec.num_classes * (per_class[0] + per_class[1] + per_class[2]);
  ds.pixels.assign(n * spec.image_size * spec.image_size * 3, 0.0f);
  ds.labels.reserve(n);
  ds.split_tags.reserve(n);

  struct Job {
    std::uint32_t cls;
    std::uint8_t split;
    std::size_t idx_in_split;
  };
  std::vector<Job> jobs;
  jobs.reserve(n);
  for (std::uint8_t split = 0; split < 3; ++split)
    for (std::uint32_t c = 0; c < spec.num_classes; ++c)
      for (std::size_t i = 0; i < per_class[split]; ++i) {
        jobs.push_back({c, split, i});
        ds.labels.push_back(c);
        ds.split_tags.push_back(split);
      }

  const std::size_t stride = spec.image_size * spec.image_size * 3;
  parallel_for(jobs.size(), [&](std::size_t j) {
    Rng rng(Rng::derive(spec.seed, jobs[j].split, jobs[j].cls, jobs[j].idx_in_split));
    render_sample(spec, triples[jobs[j].cls], rng, ds.pixels.data() + j * stride);
  });
  return ds;
}

void save_trxd(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_trxd: cannot open " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint32_t>(ds.size()));
  write_pod(os, static_cast<std::uint32_t>(ds.num_classes));
  write_pod(os, static_cast<std::uint32_t>(ds.height));
  write_pod(os, static_cast<std::uint32_t>(ds.width));
  os.write(reinterpret_cast<const char*>(ds.pixels.data()),
           static_cast<std::streamsize>(ds.pixels.size() * sizeof(float)));
  os.write(reinterpret_cast<const char*>(ds.labels.data()),
           static_cast<std::streamsize>(ds.labels.size() * sizeof(std::uint32_t)));
  os.write(reinterpret_cast<const char*>(ds.split_tags.data()),
           static_cast<std::streamsize>(ds.split_tags.size()));
  if (!os) throw std::runtime_error("save_trxd: write failed for " + path);
}

Dataset load_trxd(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_trxd: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_trxd: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw std::runtime_error("load_trxd: unsupported version " + std::to_string(version));
  const auto n = read_pod<std::uint32_t>(is, "sample count");
  const auto c = read_pod<std::uint32_t>(is, "class count");
  const auto h = read_pod<std::uint32_t>(is, "height");
  const auto w = read_pod<std::uint32_t>(is, "width");

  Dataset ds;
  ds.name = path;
  ds.height = h;
  ds.width = w;
  ds.num_classes = c;
  ds.pixels.resize(static_cast<std::size_t>(n) * h * w * 3);
  is.read(reinterpret_cast<char*>(ds.pixels.data()),
          static_cast<std::streamsize>(ds.pixels.size() * sizeof(float)));
  if (!is) throw std::runtime_error("load_trxd: truncated pixel data in " + path);
  ds.labels.resize(n);
  is.read(reinterpret_cast<char*>(ds.labels.data()),
          static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
  if (!is) throw std::runtime_error("load_trxd: truncated labels in " + path);
  ds.split_tags.resize(n);
  is.read(reinterpret_cast<char*>(ds.split_tags.data()), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("load_trxd: truncated split tags in " + path);
  for (std::uint32_t l : ds.labels)
    if (l >= c) throw std::runtime_error("load_trxd: label >= class count in " + path);
  for (std::uint8_t t : ds.split_tags)
    if (t > 2) throw std::runtime_error("load_trxd: invalid split tag in " + path);
  return ds;
}

Dataset make_splits(const Dataset& ds, const std::vector<double>& fractions,
                    std::uint64_t seed) {
  if (fractions.empty() || fractions.size() > 3)
    throw std::invalid_argument("make_splits: need 1..3 fractions");
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("make_splits: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("make_splits: fractions must sum to 1");

  Dataset out = ds;
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < fractions.size())
      throw std::invalid_argument("make_splits: class " + std::to_string(c) +
                                  " has fewer samples than splits");
    Rng rng(Rng::derive(seed, c));
    for (std::size_t i = idx.size() - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_int(i + 1)]);

    // Largest-remainder apportionment keeps counts within one of exact.
    const std::size_t n = idx.size();
    std::vector<std::size_t> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
      const double exact = fractions[k] * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[k];
      rem.emplace_back(exact - std::floor(exact), k);
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) counts[rem[r % rem.size()].second]++;

    std::size_t pos = 0;
    for (std::size_t k = 0; k < counts.size(); ++k)
      for (std::size_t i = 0; i < counts[k]; ++i)
        out.split_tags[idx[pos++]] = static_cast<std::uint8_t>(k);
  }
  return out;
}

}  // namespace trex
