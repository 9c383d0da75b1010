#include "mtuda/losses.hpp"

#include "mtuda/errors.hpp"

namespace mtuda {

std::string to_string(Representation r) {
  return r == Representation::SoftMap ? "softmap" : "self_information";
}

Representation parse_representation(const std::string& s) {
  if (s == "softmap") return Representation::SoftMap;
  if (s == "self_information") return Representation::SelfInformation;
  throw ConfigError("unknown representation '" + s + "' (softmap | self_information)");
}

void AdvWeights::validate() const {
  if (!(lambda_adv >= 0.0 && lambda_s >= 0.0 && lambda_t >= 0.0)) {
    throw ConfigError("adversarial weights must be >= 0");
  }
}

Tensor self_information_map(Graph& g, const Tensor& probs) { return self_information(g, probs); }

Tensor representation(Graph& g, const Tensor& probs, Representation kind) {
  if (kind == Representation::SelfInformation) return self_information(g, probs);
  // Identity that keeps graph linkage (a copy would not).
  return scale(g, probs, 1.0);
}

Tensor seg_loss(Graph& g, const Tensor& probs, const LabelMap& labels, bool* all_ignored) {
  if (all_ignored) {
    bool any = false;
    for (std::int32_t v : labels.values) any = any || v != kIgnoreLabel;
    *all_ignored = !any;
  }
  return nll_probs(g, probs, labels, kProbFloor);
}

Tensor bce_logits(Graph& g, const Tensor& logit_map, int target_label) {
  return bce_with_logits(g, logit_map, target_label);
}

Tensor disc_loss_single(Graph& g, const DiscriminatorParams& d, const Tensor& q_source, const Tensor& q_target) {
  Tensor src = bce_logits(g, discriminator_forward(g, d, q_source.detach()), 1);
  Tensor tgt = bce_logits(g, discriminator_forward(g, d, q_target.detach()), 0);
  return add(g, src, tgt);
}

Tensor adv_fool_loss(Graph& g, const DiscriminatorParams& d, const Tensor& q_target) {
  return bce_logits(g, discriminator_forward(g, d, q_target, /*frozen=*/true), 1);
}

Tensor union_except(Graph& g, const std::vector<const Tensor*>& q_targets, std::size_t n) {
  std::vector<const Tensor*> parts;
  for (std::size_t k = 1; k <= q_targets.size(); ++k) {
    if (k != n) parts.push_back(q_targets[k - 1]);
  }
  if (parts.empty()) throw ContractError("union_except: no other target domains");
  return concat_batch(g, parts);
}

namespace {

void notify(const UnionHook& hook, std::size_t n, int label, const std::vector<const Tensor*>& q_targets,
            const Tensor& batch) {
  if (!hook) return;
  UnionBatchEvent ev;
  ev.disc_index = n;
  ev.label = label;
  ev.batch = &batch;
  for (std::size_t k = 1; k <= q_targets.size(); ++k) {
    if ((label == 1) == (k == n)) {
      ev.member_domains.push_back(k);
      ev.member_sizes.push_back(q_targets[k - 1]->dim(0));
    }
  }
  hook(ev);
}

const DiscriminatorParams& lookup(const std::map<std::size_t, DiscriminatorParams>& m, std::size_t n,
                                  const char* kind) {
  auto it = m.find(n);
  if (it == m.end()) throw ContractError(std::string("missing ") + kind + " discriminator " + std::to_string(n));
  return it->second;
}

}  // namespace

MultiDisDiscLosses multidis_disc_losses(Graph& g, const DiscriminatorBank& bank, const Tensor& q_source,
                                        const std::vector<const Tensor*>& q_targets, const UnionHook& hook) {
  const std::size_t T = q_targets.size();
  if (T == 0) throw ContractError("multidis_disc_losses: no target batches");
  const double inv_t = 1.0 / static_cast<double>(T);

  std::vector<Tensor> detached;
  for (const Tensor* q : q_targets) detached.push_back(q->detach());
  std::vector<const Tensor*> qd;
  for (const Tensor& q : detached) qd.push_back(&q);

  MultiDisDiscLosses out;
  Tensor l_dst = Tensor::scalar(0.0);
  for (std::size_t n = 1; n <= T; ++n) {
    l_dst = add(g, l_dst, disc_loss_single(g, lookup(bank.source_target, n, "source-target"), q_source, *qd[n - 1]));
  }
  out.l_dst = scale(g, l_dst, inv_t);

  if (T < 2) {
    out.l_dt = Tensor::scalar(0.0);
    out.l_dt_undefined = true;
    return out;
  }
  Tensor l_dt = Tensor::scalar(0.0);
  for (std::size_t n = 1; n <= T; ++n) {
    const DiscriminatorParams& d = lookup(bank.target_target, n, "target-target");
    notify(hook, n, 1, qd, *qd[n - 1]);
    Tensor own = bce_logits(g, discriminator_forward(g, d, *qd[n - 1]), 1);
    Tensor pooled = union_except(g, qd, n);
    notify(hook, n, 0, qd, pooled);
    Tensor others = bce_logits(g, discriminator_forward(g, d, pooled), 0);
    l_dt = add(g, l_dt, add(g, own, others));
  }
  out.l_dt = scale(g, l_dt, inv_t);
  return out;
}

MultiDisSegLoss multidis_total_segmenter_loss(Graph& g, const Tensor& probs_source, const LabelMap& labels_source,
                                              const std::vector<const Tensor*>& q_targets,
                                              const DiscriminatorBank& bank, const AdvWeights& w,
                                              const UnionHook& hook) {
  const std::size_t T = q_targets.size();
  if (T == 0) throw ContractError("multidis_total_segmenter_loss: no target batches");
  const double inv_t = 1.0 / static_cast<double>(T);
  MultiDisSegLoss out;
  out.seg = seg_loss(g, probs_source, labels_source);

  Tensor adv_s = Tensor::scalar(0.0);
  for (std::size_t n = 1; n <= T; ++n) {
    adv_s = add(g, adv_s, adv_fool_loss(g, lookup(bank.source_target, n, "source-target"), *q_targets[n - 1]));
  }
  out.adv_s = scale(g, adv_s, inv_t);

  Tensor adv_t = Tensor::scalar(0.0);
  if (T >= 2 && w.lambda_t != 0.0) {
    for (std::size_t n = 1; n <= T; ++n) {
      Tensor pooled = union_except(g, q_targets, n);
      notify(hook, n, 0, q_targets, pooled);
      adv_t = add(g, adv_t, adv_fool_loss(g, lookup(bank.target_target, n, "target-target"), pooled));
    }
  }
  out.adv_t = scale(g, adv_t, inv_t);

  Tensor total = add(g, out.seg, scale(g, out.adv_s, w.lambda_s));
  out.total = add(g, total, scale(g, out.adv_t, w.lambda_t));
  return out;
}

Tensor kl_distill_loss(Graph& g, const Tensor& teacher_probs, const Tensor& student_probs,
                       const std::vector<double>* pixel_mask) {
  return kl_divergence(g, teacher_probs.detach(), student_probs, kProbFloor, pixel_mask);
}

Tensor mtkt_agnostic_loss(Graph& g, const std::vector<const Tensor*>& teacher_probs,
                          const std::vector<const Tensor*>& student_probs,
                          const std::vector<const std::vector<double>*>& pixel_masks) {
  const std::size_t T = teacher_probs.size();
  if (T == 0 || student_probs.size() != T) throw ContractError("mtkt_agnostic_loss: need one student per teacher");
  if (!pixel_masks.empty() && pixel_masks.size() != T) throw ContractError("mtkt_agnostic_loss: one mask per domain");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t n = 0; n < T; ++n) {
    const std::vector<double>* mask = pixel_masks.empty() ? nullptr : pixel_masks[n];
    total = add(g, total, kl_distill_loss(g, *teacher_probs[n], *student_probs[n], mask));
  }
  return scale(g, total, 1.0 / static_cast<double>(T));
}

}  // namespace mtuda
