#include "mtuda/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtuda/errors.hpp"
#include "mtuda/trainers.hpp"

namespace mtuda {

std::string to_string(PLStrategy s) {
  switch (s) {
    case PLStrategy::TeacherOnly: return "teacher_only";
    case PLStrategy::TeacherPlusKLMask: return "teacher_kl_mask";
    case PLStrategy::TeacherPlusAgnostic: return "teacher_agnostic";
  }
  return "?";
}

PLStrategy parse_pl_strategy(const std::string& s) {
  for (PLStrategy v : {PLStrategy::TeacherOnly, PLStrategy::TeacherPlusKLMask, PLStrategy::TeacherPlusAgnostic}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown pseudo-label strategy '" + s + "' (teacher_only | teacher_kl_mask | teacher_agnostic)");
}

namespace {

struct MapDims {
  std::size_t c, h, w;
};

MapDims single_map_dims(const Tensor& probs) {
  const Shape& s = probs.shape();
  if (s.size() == 3) return {s[0], s[1], s[2]};
  if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
  throw DimensionError("expected a [C, H, W] or [1, C, H, W] map, got " + shape_str(s));
}

}  // namespace

std::vector<double> normalized_entropy(const Tensor& probs) {
  const MapDims d = single_map_dims(probs);
  if (d.c < 2) throw DimensionError("normalized entropy needs at least 2 classes");
  const auto p = probs.values();
  const std::size_t hw = d.h * d.w;
  const double norm = std::log(static_cast<double>(d.c));
  std::vector<double> out(hw, 0.0);
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = p[c * hw + i];
      if (v > 0.0) out[i] -= v * std::log(v);
    }
  }
  for (double& e : out) e /= norm;
  return out;
}

PseudoLabelMap extract_pseudo_labels(const Tensor& probs, double keep_fraction, const std::string& source_head) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ContractError("keep_fraction must lie in (0, 1]");
  const MapDims d = single_map_dims(probs);
  const Tensor as4 = probs.rank() == 4 ? probs : Tensor({1, d.c, d.h, d.w}, std::vector<double>(probs.values().begin(), probs.values().end()));
  const LabelMap arg = argmax_channel(as4);
  const std::vector<double> ent = normalized_entropy(probs);

  std::vector<std::vector<std::size_t>> by_class(d.c);
  for (std::size_t i = 0; i < arg.size(); ++i) by_class[static_cast<std::size_t>(arg.values[i])].push_back(i);

  PseudoLabelMap out;
  out.labels = LabelMap(1, d.h, d.w, kIgnoreLabel);
  out.source_head = source_head;
  std::size_t kept = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    auto& px = by_class[c];
    std::stable_sort(px.begin(), px.end(), [&](std::size_t a, std::size_t b) { return ent[a] < ent[b]; });
    const auto n_keep = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(px.size())));
    for (std::size_t k = 0; k < n_keep; ++k) out.labels.values[px[k]] = static_cast<std::int32_t>(c);
    kept += n_keep;
  }
  out.selection_fraction = arg.size() ? static_cast<double>(kept) / static_cast<double>(arg.size()) : 0.0;
  return out;
}

std::vector<double> kl_agreement_mask(const LabelMap& pseudo, const LabelMap& student_argmax) {
  if (pseudo.n != student_argmax.n || pseudo.h != student_argmax.h || pseudo.w != student_argmax.w) {
    throw DimensionError("pseudo-label and student maps differ in shape");
  }
  std::vector<double> mask(pseudo.size(), 1.0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const std::int32_t pl = pseudo.values[i];
    if (pl != kIgnoreLabel && pl != student_argmax.values[i]) mask[i] = 0.0;
  }
  return mask;
}

namespace {

std::vector<LabelMap> label_dataset(const TrainState& state, const DomainDataset& ds, const std::string& head,
                                    double keep) {
  std::vector<LabelMap> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor probs = predict_probs(state, ds.batch_images({i}), head);
    out.push_back(extract_pseudo_labels(probs, keep, head).labels);
  }
  return out;
}

TrainState refine_with(const TrainState& state, const TrainData& data, Refinement r, std::size_t refine_iters,
                       const TrainHooks& hooks) {
  TrainState out = state;
  out.refine = std::move(r);
  out.refine.active = true;
  run_training(out, data, out.iteration + refine_iters, hooks);
  out.refine = Refinement{};
  return out;
}

}  // namespace

TrainState refine_mtkt(const TrainState& state, const TrainData& data, PLStrategy strategy, std::size_t refine_iters,
                       double keep_fraction) {
  return refine_mtkt(state, data, strategy, refine_iters, keep_fraction, TrainHooks{});
}

TrainState refine_mtkt(const TrainState& state, const TrainData& data, PLStrategy strategy, std::size_t refine_iters,
                       double keep_fraction, const TrainHooks& hooks) {
  if (state.cfg.method != Method::MTKT) {
    throw ContractError("strategy " + to_string(strategy) + " needs an mtkt state, got " + to_string(state.cfg.method));
  }
  if (data.targets.size() != state.cfg.T) throw ContractError("refinement targets do not match the trained state");
  Refinement r;
  r.strategy = strategy;
  r.keep_fraction = keep_fraction;
  for (std::size_t n = 1; n <= data.targets.size(); ++n) {
    r.labels.push_back(label_dataset(state, *data.targets[n - 1], spec_head(n), keep_fraction));
  }
  return refine_with(state, data, std::move(r), refine_iters, hooks);
}

TrainState refine_baseline(const TrainState& state, const TrainData& data, std::size_t refine_iters,
                           double keep_fraction) {
  return refine_baseline(state, data, refine_iters, keep_fraction, TrainHooks{});
}

TrainState refine_baseline(const TrainState& state, const TrainData& data, std::size_t refine_iters,
                           double keep_fraction, const TrainHooks& hooks) {
  const Method m = state.cfg.method;
  if (m != Method::MultiTargetBaseline && m != Method::SingleTarget) {
    throw ContractError("baseline refinement needs a single_target or multi_target_baseline state, got " + to_string(m));
  }
  Refinement r;
  r.baseline = true;
  r.keep_fraction = keep_fraction;
  const DomainDataset merged = m == Method::MultiTargetBaseline ? merge_datasets(data.targets) : *data.targets.at(0);
  r.labels.push_back(label_dataset(state, merged, kMainHead, keep_fraction));
  return refine_with(state, data, std::move(r), refine_iters, hooks);
}

}  // namespace mtuda
