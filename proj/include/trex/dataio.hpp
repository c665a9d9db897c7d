// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_DATAIO_HPP
#define TREX_DATAIO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "trex/common.hpp"

namespace trex {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

/// In-memory image dataset: N x H x W x 3 float pixels in [0,1], class labels
/// and per-sample split tags. Immutable after construction.
struct Dataset {
  std::string name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<float> pixels;             // N*H*W*3, row-major HWC
  std::vector<std::uint32_t> labels;     // N
  std::vector<std::uint8_t> split_tags;  // N

  std::size_t size() const { return labels.size(); }
  const float* image_data(std::size_t i) const { return pixels.data() + i * height * width * 3; }
  std::vector<std::size_t> indices_of(Split s) const;
  void validate() const;
};

/// One procedural class is a (shape, hue band, stripe frequency) triple. Hue
/// band ids extend with the family offset, so distinct offsets never share a
/// triple.
struct ClassTriple {
  std::uint32_t shape;     // 0..3
  std::uint32_t hue_band;  // 4*family_offset + 0..3
  std::uint32_t stripes;   // 0..3
  bool operator==(const ClassTriple&) const = default;
};

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t num_classes = 16;
  std::size_t train_per_class = 32;
  std::size_t val_per_class = 8;
  std::size_t test_per_class = 16;
  std::size_t image_size = 32;
  std::uint32_t family_offset = 0;   // transfer-level analogue
  double background_noise = 0.15;
  double position_jitter = 0.2;
  std::string name = "synthetic";
};

std::vector<ClassTriple> class_triples(const SyntheticSpec& spec);

/// Renders a procedural dataset. Identical spec -> identical bytes.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Bit-exact binary dataset format (magic "TRXD").
void save_trxd(const Dataset& ds, const std::string& path);
Dataset load_trxd(const std::string& path);

/// Stratified per-class re-tagging. fractions are (train, val, test) and must
/// sum to 1; per-class counts stay within one sample of the exact proportion.
Dataset make_splits(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed);

}  // namespace trex

#endif  // TREX_DATAIO_HPP
