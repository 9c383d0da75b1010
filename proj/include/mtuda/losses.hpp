#pragma once

// Training objectives as scalar tensors on the autodiff graph.

#include <functional>
#include <string>
#include <vector>

#include "mtuda/nets.hpp"
#include "mtuda/tensor.hpp"

namespace mtuda {

/// Probability floor inside every log.
inline constexpr double kProbFloor = 1e-12;

enum class Representation { SoftMap, SelfInformation };

std::string to_string(Representation r);
Representation parse_representation(const std::string& s);

struct AdvWeights {
  double lambda_adv = 1e-3;
  double lambda_s = 1e-3;
  double lambda_t = 1e-3;

  void validate() const;  // all >= 0
  friend bool operator==(const AdvWeights&, const AdvWeights&) = default;
};

/// Entry-wise -p log p; 0 at p = 0.
Tensor self_information_map(Graph& g, const Tensor& probs);

/// The discriminator input for the chosen representation.
Tensor representation(Graph& g, const Tensor& probs, Representation kind);

/// Mean cross-entropy over non-IGNORE pixels. Sets `*all_ignored` when no
/// pixel counts (the loss is then 0).
Tensor seg_loss(Graph& g, const Tensor& probs, const LabelMap& labels, bool* all_ignored = nullptr);

/// Mean binary cross-entropy of a logit map against a constant label.
Tensor bce_logits(Graph& g, const Tensor& logit_map, int target_label);

/// <BCE(D(q_s), 1)> + <BCE(D(q_t), 0)>. Both maps are detached here so the
/// step can never reach the segmenter.
Tensor disc_loss_single(Graph& g, const DiscriminatorParams& d, const Tensor& q_source, const Tensor& q_target);

/// <BCE(D(q_t), 1)> with D frozen: the gradient reaches q_t only.
Tensor adv_fool_loss(Graph& g, const DiscriminatorParams& d, const Tensor& q_target);

/// Observes every batch a 1-vs-all discriminator is evaluated on.
struct UnionBatchEvent {
  std::size_t disc_index = 0;                // 1-based n of D^t_n
  int label = 0;                             // 1: domain n, 0: pooled other targets
  std::vector<std::size_t> member_domains;   // 1-based domains in the batch, in order
  std::vector<std::size_t> member_sizes;     // samples contributed by each member
  const Tensor* batch = nullptr;             // the exact tensor fed to D^t_n
};
using UnionHook = std::function<void(const UnionBatchEvent&)>;

/// Pooled batch of all targets except n (1-based), as a graph op so
/// gradients reach every member.
Tensor union_except(Graph& g, const std::vector<const Tensor*>& q_targets, std::size_t n);

struct MultiDisDiscLosses {
  Tensor l_dst;
  Tensor l_dt;
  bool l_dt_undefined = false;  // T = 1: no 1-vs-all terms, l_dt = 0
};

/// Source-target and target-target discriminator objectives. All q are detached.
MultiDisDiscLosses multidis_disc_losses(Graph& g, const DiscriminatorBank& bank, const Tensor& q_source,
                                        const std::vector<const Tensor*>& q_targets,
                                        const UnionHook& hook = nullptr);

struct MultiDisSegLoss {
  Tensor total;
  Tensor seg;
  Tensor adv_s;
  Tensor adv_t;
};

/// L_seg + lambda_s * L^s_adv + lambda_t * L^t_adv with the bank frozen.
/// Target-target terms are skipped when T = 1 or lambda_t = 0.
MultiDisSegLoss multidis_total_segmenter_loss(Graph& g, const Tensor& probs_source, const LabelMap& labels_source,
                                              const std::vector<const Tensor*>& q_targets,
                                              const DiscriminatorBank& bank, const AdvWeights& w,
                                              const UnionHook& hook = nullptr);

/// sum over (c, h, w) of t log(t / s), averaged over the batch. The teacher
/// is detached. `pixel_mask` ([N*H*W], optional) zeroes individual pixels.
Tensor kl_distill_loss(Graph& g, const Tensor& teacher_probs, const Tensor& student_probs,
                       const std::vector<double>* pixel_mask = nullptr);

/// Mean over domains of kl_distill_loss(teacher_n, student_n).
Tensor mtkt_agnostic_loss(Graph& g, const std::vector<const Tensor*>& teacher_probs,
                          const std::vector<const Tensor*>& student_probs,
                          const std::vector<const std::vector<double>*>& pixel_masks = {});

}  // namespace mtuda
