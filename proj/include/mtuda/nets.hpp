#pragma once

// Segmenter (shared feature extractor + named classifier heads) and the
// fully-convolutional domain discriminator.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtuda/tensor.hpp"

namespace mtuda {

struct ArchConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = kNumSuperClasses;
  std::vector<std::size_t> feat_widths{16, 32, 32, 64};
  std::vector<int> feat_strides{2, 1, 2, 1};
  double feat_slope = 0.0;  // 0 is a plain ReLU
  std::vector<std::size_t> disc_widths{16, 32, 64, 1};
  double disc_slope = 0.2;
  std::size_t kernel = 3;

  /// Throws ConfigError on empty stacks, zero widths, even kernels, a
  /// discriminator not ending in one channel, or mismatched stride lists.
  void validate() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct ConvLayer {
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]
  int stride = 1;
  int padding = 0;
};

inline const std::string kMainHead = "main";
inline const std::string kAgnosticHead = "agn";
/// "spec_<n>" for 1-based target index n.
std::string spec_head(std::size_t n);

struct SegmenterParams {
  std::vector<ConvLayer> feat;
  std::vector<std::pair<std::string, ConvLayer>> heads;  // ordered by construction
  double slope = 0.0;

  bool has_head(const std::string& id) const;
  const ConvLayer& head(const std::string& id) const;
  ConvLayer& head(const std::string& id);
  std::vector<std::string> head_ids() const;

  std::vector<Tensor*> feat_parameters();
  std::vector<Tensor*> head_parameters(const std::string& id);
  std::vector<Tensor*> parameters();
  /// Stable names ("feat.0.weight", "head.agn.bias", ...) for persistence.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
};

struct DiscriminatorParams {
  std::vector<ConvLayer> layers;
  double slope = 0.2;

  std::vector<Tensor*> parameters();
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
};

/// Discriminators keyed by 1-based target index.
struct DiscriminatorBank {
  std::map<std::size_t, DiscriminatorParams> source_target;
  std::map<std::size_t, DiscriminatorParams> target_target;

  std::size_t size() const { return source_target.size() + target_target.size(); }
  std::vector<Tensor*> parameters();
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
};

struct SoftMaps {
  Tensor probs;   // [N, C, H, W]
  Tensor logits;  // upsampled, [N, C, H, W]
};

/// He-uniform weights U(-a, a), a = sqrt(6 / fan_in) (std sqrt(2 / fan_in)),
/// zero biases. Every tensor draws from its own stream derived from `seed`
/// and its parameter name, so adding a head never perturbs the others.
SegmenterParams init_segmenter(const ArchConfig& arch, const std::vector<std::string>& head_ids,
                               std::uint64_t seed);
DiscriminatorParams init_discriminator(const ArchConfig& arch, std::uint64_t seed);

/// He-uniform bound for a conv weight of the given fan-in.
double init_bound(std::size_t fan_in);

/// Feature map at reduced resolution, shared by every head.
Tensor extract_features(Graph& g, const SegmenterParams& params, const Tensor& batch);

/// One head on precomputed features: 1x1 conv, upsample to (out_h, out_w), softmax.
SoftMaps head_forward(Graph& g, const SegmenterParams& params, const Tensor& features,
                      const std::string& head_id, std::size_t out_h, std::size_t out_w);

SoftMaps segmenter_forward(Graph& g, const SegmenterParams& params, const Tensor& batch,
                           const std::string& head_id);

/// Raw logit map [N, 1, h', w']. With `frozen`, the layer weights enter the
/// graph as constants so no gradient reaches them.
Tensor discriminator_forward(Graph& g, const DiscriminatorParams& params, const Tensor& q,
                             bool frozen = false);

}  // namespace mtuda
