#include "mtuda/nets.hpp"

#include <algorithm>
#include <cmath>

#include "mtuda/errors.hpp"
#include "mtuda/rng.hpp"

namespace mtuda {

void ArchConfig::validate() const {
  if (in_channels == 0 || num_classes < 2) throw ConfigError("arch: in_channels >= 1 and num_classes >= 2 required");
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("arch: kernel must be odd");
  if (feat_widths.empty()) throw ConfigError("arch: feature extractor needs at least one block");
  if (feat_strides.size() != feat_widths.size()) {
    throw ConfigError("arch: feat_strides and feat_widths differ in length");
  }
  for (std::size_t w : feat_widths) {
    if (w == 0) throw ConfigError("arch: feature widths must be positive");
  }
  for (int s : feat_strides) {
    if (s < 1) throw ConfigError("arch: strides must be >= 1");
  }
  if (disc_widths.empty() || disc_widths.back() != 1) {
    throw ConfigError("arch: discriminator must end in a single logit channel");
  }
  for (std::size_t w : disc_widths) {
    if (w == 0) throw ConfigError("arch: discriminator widths must be positive");
  }
  if (!(feat_slope >= 0.0 && feat_slope < 1.0) || !(disc_slope >= 0.0 && disc_slope < 1.0)) {
    throw ConfigError("arch: leaky slopes must be in [0, 1)");
  }
}

std::string spec_head(std::size_t n) { return "spec_" + std::to_string(n); }

double init_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

namespace {

ConvLayer make_conv(std::size_t cin, std::size_t cout, std::size_t k, int stride, std::uint64_t seed,
                    const std::string& name) {
  ConvLayer layer;
  layer.stride = stride;
  layer.padding = static_cast<int>(k / 2);
  layer.weight = Tensor({cout, cin, k, k}, 0.0, true);
  layer.bias = Tensor({cout}, 0.0, true);
  Rng rng(derive_seed(seed, name + ".weight"));
  const double a = init_bound(cin * k * k);
  for (double& v : layer.weight.values()) v = rng.uniform(-a, a);
  return layer;
}

void append_layer(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix, ConvLayer& l) {
  out.emplace_back(prefix + ".weight", &l.weight);
  out.emplace_back(prefix + ".bias", &l.bias);
}

}  // namespace

bool SegmenterParams::has_head(const std::string& id) const {
  return std::any_of(heads.begin(), heads.end(), [&](const auto& h) { return h.first == id; });
}

const ConvLayer& SegmenterParams::head(const std::string& id) const {
  for (const auto& h : heads) {
    if (h.first == id) return h.second;
  }
  throw ConfigError("segmenter has no head '" + id + "'");
}

ConvLayer& SegmenterParams::head(const std::string& id) {
  return const_cast<ConvLayer&>(static_cast<const SegmenterParams&>(*this).head(id));
}

std::vector<std::string> SegmenterParams::head_ids() const {
  std::vector<std::string> ids;
  for (const auto& h : heads) ids.push_back(h.first);
  return ids;
}

std::vector<Tensor*> SegmenterParams::feat_parameters() {
  std::vector<Tensor*> out;
  for (auto& l : feat) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<Tensor*> SegmenterParams::head_parameters(const std::string& id) {
  ConvLayer& l = head(id);
  return {&l.weight, &l.bias};
}

std::vector<Tensor*> SegmenterParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> SegmenterParams::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < feat.size(); ++i) append_layer(out, "feat." + std::to_string(i), feat[i]);
  for (auto& [id, l] : heads) append_layer(out, "head." + id, l);
  return out;
}

std::vector<Tensor*> DiscriminatorParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> DiscriminatorParams::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) append_layer(out, "layer." + std::to_string(i), layers[i]);
  return out;
}

std::vector<Tensor*> DiscriminatorBank::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> DiscriminatorBank::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [n, d] : source_target) {
    for (auto& [name, t] : d.named_parameters()) out.emplace_back("disc.st." + std::to_string(n) + "." + name, t);
  }
  for (auto& [n, d] : target_target) {
    for (auto& [name, t] : d.named_parameters()) out.emplace_back("disc.tt." + std::to_string(n) + "." + name, t);
  }
  return out;
}

SegmenterParams init_segmenter(const ArchConfig& arch, const std::vector<std::string>& head_ids,
                               std::uint64_t seed) {
  arch.validate();
  if (head_ids.empty()) throw ConfigError("segmenter needs at least one head");
  SegmenterParams p;
  p.slope = arch.feat_slope;
  std::size_t cin = arch.in_channels;
  for (std::size_t i = 0; i < arch.feat_widths.size(); ++i) {
    p.feat.push_back(make_conv(cin, arch.feat_widths[i], arch.kernel, arch.feat_strides[i], seed,
                               "feat." + std::to_string(i)));
    cin = arch.feat_widths[i];
  }
  for (const auto& id : head_ids) {
    if (p.has_head(id)) throw ConfigError("duplicate head '" + id + "'");
    p.heads.emplace_back(id, make_conv(cin, arch.num_classes, 1, 1, seed, "head." + id));
  }
  return p;
}

DiscriminatorParams init_discriminator(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  DiscriminatorParams d;
  d.slope = arch.disc_slope;
  std::size_t cin = arch.num_classes;
  for (std::size_t i = 0; i < arch.disc_widths.size(); ++i) {
    d.layers.push_back(make_conv(cin, arch.disc_widths[i], arch.kernel, 2, seed, "layer." + std::to_string(i)));
    cin = arch.disc_widths[i];
  }
  return d;
}

Tensor extract_features(Graph& g, const SegmenterParams& params, const Tensor& batch) {
  if (params.feat.empty()) throw ConfigError("segmenter has no feature extractor");
  // Copies are deep snapshots that drop graph linkage, so the input is never copied.
  Tensor h;
  for (const auto& l : params.feat) {
    const Tensor& in = h.defined() ? h : batch;
    h = leaky_relu(g, conv2d(g, in, l.weight, l.bias, l.stride, l.padding), params.slope);
  }
  return h;
}

SoftMaps head_forward(Graph& g, const SegmenterParams& params, const Tensor& features,
                      const std::string& head_id, std::size_t out_h, std::size_t out_w) {
  const ConvLayer& l = params.head(head_id);
  Tensor small = conv2d(g, features, l.weight, l.bias, l.stride, l.padding);
  SoftMaps out;
  out.logits = bilinear_upsample(g, small, out_h, out_w);
  out.probs = softmax_channel(g, out.logits);
  return out;
}

SoftMaps segmenter_forward(Graph& g, const SegmenterParams& params, const Tensor& batch,
                           const std::string& head_id) {
  if (!params.has_head(head_id)) throw ConfigError("segmenter has no head '" + head_id + "'");
  if (batch.rank() != 4) throw DimensionError("segmenter_forward: batch must be [N, 3, H, W]");
  Tensor f = extract_features(g, params, batch);
  return head_forward(g, params, f, head_id, batch.dim(2), batch.dim(3));
}

Tensor discriminator_forward(Graph& g, const DiscriminatorParams& params, const Tensor& q, bool frozen) {
  if (params.layers.empty()) throw ConfigError("discriminator has no layers");
  if (q.rank() != 4 || q.dim(1) != params.layers.front().weight.dim(1)) {
    throw DimensionError("discriminator_forward: expected " + std::to_string(params.layers.front().weight.dim(1)) +
                         " channels, got " + shape_str(q.shape()));
  }
  Tensor h;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const ConvLayer& l = params.layers[i];
    const Tensor& in = h.defined() ? h : q;
    if (frozen) {
      h = conv2d(g, in, l.weight.detach(), l.bias.detach(), l.stride, l.padding);
    } else {
      h = conv2d(g, in, l.weight, l.bias, l.stride, l.padding);
    }
    if (i + 1 < params.layers.size()) h = leaky_relu(g, h, params.slope);
  }
  return h;
}

}  // namespace mtuda
