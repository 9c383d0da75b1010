#pragma once

// Procedural multi-domain street-scene stand-ins with exact label maps.
//
// A scene is laid out from one random stream (depending only on the seed and
// class_frequency_bias) and rendered from another. Two specs that differ only
// in appearance fields therefore produce identical label maps for a seed.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtuda/labels.hpp"
#include "mtuda/tensor.hpp"

namespace mtuda {

using Rgb = std::array<double, 3>;

struct DomainSpec {
  std::string domain_id;
  std::array<Rgb, kNumSuperClasses> palette{};
  double hue_shift = 0.0;  // degrees, rotation about the gray axis
  double brightness = 1.0;
  double noise_sigma = 0.0;
  std::array<double, kNumSuperClasses> class_frequency_bias{};
  int texture_grain = 1;  // side of the blocks of the coarse noise layer

  /// Throws ConfigError: brightness <= 0, noise_sigma < 0, negative bias,
  /// fewer than 3 nonzero bias entries, grain < 1, palette outside [0, 1].
  void validate() const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// "synth", "euro", "india", "world".
DomainSpec preset(const std::string& name);
const std::vector<std::string>& preset_names();

struct Scene {
  Tensor image;  // [3, H, W], values in [0, 1]
  LabelMap labels;  // [1, H, W]
  std::string domain_id;
};

Scene generate_scene(const DomainSpec& spec, std::uint64_t seed, std::size_t h, std::size_t w);

/// Labels only (the layout stage of generate_scene).
LabelMap generate_layout(const std::array<double, kNumSuperClasses>& bias, std::uint64_t seed, std::size_t h,
                         std::size_t w);

/// Scenes of one domain, or a merged multi-domain collection. Ground truth is
/// always kept; only labeled datasets expose it through labels().
class DomainDataset {
 public:
  DomainDataset() = default;
  DomainDataset(std::string domain_id, bool labeled, std::vector<Scene> scenes);

  const std::string& domain_id() const { return domain_id_; }
  bool labeled() const { return labeled_; }
  std::size_t size() const { return scenes_.size(); }
  bool empty() const { return scenes_.empty(); }

  const Tensor& image(std::size_t i) const { return scenes_.at(i).image; }
  const std::string& scene_domain(std::size_t i) const { return scenes_.at(i).domain_id; }
  /// Training access; throws ContractError on an unlabeled dataset.
  const LabelMap& labels(std::size_t i) const;
  /// Evaluation access, for metrics only.
  const LabelMap& ground_truth(std::size_t i) const { return scenes_.at(i).labels; }
  const std::vector<Scene>& scenes() const { return scenes_; }

  /// [N, 3, H, W] stack of the given scenes.
  Tensor batch_images(const std::vector<std::size_t>& idx) const;
  /// [N, H, W] stack of training labels (labeled datasets only).
  LabelMap batch_labels(const std::vector<std::size_t>& idx) const;

  DomainDataset subset(const std::vector<std::size_t>& idx) const;
  DomainDataset as_labeled(bool labeled) const;

 private:
  std::string domain_id_;
  bool labeled_ = false;
  std::vector<Scene> scenes_;
};

/// Scene i uses seed derive_seed(seed, first_index + i).
DomainDataset generate_dataset(const DomainSpec& spec, std::size_t n, std::uint64_t seed, std::size_t h,
                               std::size_t w, bool labeled, std::size_t first_index = 0);

/// Round-robin interleave: d1[0], d2[0], d1[1], d2[1], ...; exhausted inputs
/// drop out. Throws ContractError when labeled flags differ.
DomainDataset merge_datasets(const std::vector<const DomainDataset*>& datasets);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded permutation of [0, n); the first n - val_count go to train.
SplitIndices split_indices(std::size_t n, std::size_t val_count, std::uint64_t seed);

/// Hue rotation about the gray axis, exposed for tests.
Rgb rotate_hue(const Rgb& c, double degrees);

}  // namespace mtuda
