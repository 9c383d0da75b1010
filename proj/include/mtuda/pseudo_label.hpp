#pragma once

// Entropy-ranked pseudo-labels and single-round self-training refinement.

#include <string>
#include <vector>

#include "mtuda/labels.hpp"
#include "mtuda/tensor.hpp"

namespace mtuda {

struct TrainState;
struct TrainData;
struct TrainHooks;

enum class PLStrategy { TeacherOnly, TeacherPlusKLMask, TeacherPlusAgnostic };

std::string to_string(PLStrategy s);
PLStrategy parse_pl_strategy(const std::string& s);

struct PseudoLabelMap {
  LabelMap labels;  // [1, H, W], IGNORE where not selected
  std::string source_head;
  double selection_fraction = 0.0;
};

/// Normalized entropy H(p) / log C of every pixel of a [C, H, W] (or [1, C, H, W]) map.
std::vector<double> normalized_entropy(const Tensor& probs);

/// Labels each pixel with its argmax class, then within each class keeps the
/// floor(keep_fraction * count) pixels of lowest normalized entropy (ties:
/// lower pixel index first). Every other pixel becomes IGNORE.
PseudoLabelMap extract_pseudo_labels(const Tensor& probs, double keep_fraction, const std::string& source_head = "");

/// Per-pixel KL weights for the masked distillation variant: 0 where a
/// pseudo-label exists and disagrees with the student argmax, 1 elsewhere.
std::vector<double> kl_agreement_mask(const LabelMap& pseudo, const LabelMap& student_argmax);

/// Extracts pseudo-labels once from each teacher head (spec_n on target n)
/// and continues MTKT training for refine_iters iterations with the
/// strategy's extra terms. Throws ContractError on a non-MTKT state.
TrainState refine_mtkt(const TrainState& state, const TrainData& data, PLStrategy strategy, std::size_t refine_iters,
                       double keep_fraction);
TrainState refine_mtkt(const TrainState& state, const TrainData& data, PLStrategy strategy, std::size_t refine_iters,
                       double keep_fraction, const TrainHooks& hooks);

/// Same for a merged-target baseline: pseudo-labels from the main head, CE on
/// target batches. Throws ContractError on any other method.
TrainState refine_baseline(const TrainState& state, const TrainData& data, std::size_t refine_iters,
                           double keep_fraction);
TrainState refine_baseline(const TrainState& state, const TrainData& data, std::size_t refine_iters,
                           double keep_fraction, const TrainHooks& hooks);

}  // namespace mtuda
