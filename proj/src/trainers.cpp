#include "mtuda/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtuda/errors.hpp"

namespace mtuda {

std::string to_string(Method m) {
  switch (m) {
    case Method::SingleTarget: return "single_target";
    case Method::MultiTargetBaseline: return "multi_target_baseline";
    case Method::MultiDis: return "multi_dis";
    case Method::MTKT: return "mtkt";
    case Method::SourceOnly: return "source_only";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::SingleTarget, Method::MultiTargetBaseline, Method::MultiDis, Method::MTKT,
                   Method::SourceOnly}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s +
                    "' (single_target | multi_target_baseline | multi_dis | mtkt | source_only)");
}

void TrainConfig::validate() const {
  weights.validate();
  arch.validate();
  if (iters == 0) throw ConfigError("iters must be >= 1");
  if (method == Method::MTKT && warmup_iters >= iters) throw ConfigError("warmup_iters must be < iters");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(seg_lr > 0.0) || !(disc_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(seg_momentum >= 0.0 && seg_momentum < 1.0)) throw ConfigError("seg_momentum must be in [0, 1)");
  if (!(seg_weight_decay >= 0.0)) throw ConfigError("seg_weight_decay must be >= 0");
  if (T == 0 && method != Method::SourceOnly) throw ConfigError("T must be >= 1");
  if (num_classes != arch.num_classes) throw ConfigError("num_classes differs from the architecture's class count");
  if (!(kl_weight >= 0.0) || !(pl_weight >= 0.0)) throw ConfigError("kl_weight and pl_weight must be >= 0");
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::vector<std::vector<std::size_t>> groups, std::uint64_t seed)
    : groups_(std::move(groups)), rng_(seed) {
  std::size_t total = 0;
  for (const auto& g : groups_) total += g.size();
  if (total == 0) throw ContractError("cannot sample from an empty dataset");
  new_epoch();
}

void BatchSampler::new_epoch() {
  std::vector<std::vector<std::size_t>> shuffled = groups_;
  for (auto& g : shuffled) {
    for (std::size_t i = g.size(); i > 1; --i) std::swap(g[i - 1], g[rng_.uniform_int(i)]);
  }
  order_.clear();
  std::size_t longest = 0;
  for (const auto& g : shuffled) longest = std::max(longest, g.size());
  for (std::size_t i = 0; i < longest; ++i) {
    for (const auto& g : shuffled) {
      if (i < g.size()) order_.push_back(g[i]);
    }
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (cursor_ == order_.size()) new_epoch();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

void BatchSampler::restore(const std::string& rng_state, std::vector<std::size_t> order, std::size_t cursor) {
  rng_.set_state(rng_state);
  order_ = std::move(order);
  cursor_ = cursor;
  if (cursor_ > order_.size()) throw FormatError("sampler cursor beyond its epoch order");
}

std::vector<std::vector<std::size_t>> domain_groups(const DomainDataset& ds) {
  std::vector<std::string> ids;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto it = std::find(ids.begin(), ids.end(), ds.scene_domain(i));
    if (it == ids.end()) {
      ids.push_back(ds.scene_domain(i));
      groups.push_back({i});
    } else {
      groups[static_cast<std::size_t>(it - ids.begin())].push_back(i);
    }
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Setup
// ---------------------------------------------------------------------------

std::string deployment_head(Method m) { return m == Method::MTKT ? kAgnosticHead : kMainHead; }

std::vector<std::string> segmenter_heads(Method m, std::size_t T) {
  if (m != Method::MTKT) return {kMainHead};
  std::vector<std::string> ids;
  for (std::size_t n = 1; n <= T; ++n) ids.push_back(spec_head(n));
  ids.push_back(kAgnosticHead);
  return ids;
}

namespace {

std::string st_key(std::size_t n) { return "st." + std::to_string(n); }
std::string tt_key(std::size_t n) { return "tt." + std::to_string(n); }

// Datasets the samplers index: the merged set for the baseline, else the targets.
struct SampledTargets {
  std::optional<DomainDataset> merged;
  std::vector<const DomainDataset*> sets;
};

SampledTargets sampled_targets(const TrainConfig& cfg, const TrainData& data) {
  SampledTargets out;
  if (cfg.method == Method::SourceOnly) return out;
  if (cfg.method == Method::MultiTargetBaseline) {
    out.merged = merge_datasets(data.targets);
    out.sets.push_back(&*out.merged);
  } else {
    out.sets = data.targets;
  }
  return out;
}

void check_data(const TrainConfig& cfg, const TrainData& data) {
  if (!data.source || data.source->empty()) throw ContractError("training needs a non-empty source dataset");
  if (!data.source->labeled()) throw ContractError("the source dataset must be labeled");
  if (cfg.method == Method::SourceOnly) return;
  if (data.targets.empty()) throw ContractError("training needs at least one target dataset");
  for (const DomainDataset* t : data.targets) {
    if (!t || t->empty()) throw ContractError("target datasets must be non-empty");
    if (t->labeled()) throw ContractError("target dataset '" + t->domain_id() + "' is labeled; targets must be unlabeled");
  }
  if (cfg.method == Method::SingleTarget && data.targets.size() != 1) {
    throw ContractError("single_target training takes exactly one target domain, got " +
                        std::to_string(data.targets.size()));
  }
  if (data.targets.size() != cfg.T) {
    throw ContractError("config declares T = " + std::to_string(cfg.T) + " but " +
                        std::to_string(data.targets.size()) + " target datasets were given");
  }
}

std::vector<Tensor*> all_parameters(TrainState& s) {
  std::vector<Tensor*> out = s.segmenter.parameters();
  for (Tensor* t : s.bank.parameters()) out.push_back(t);
  return out;
}

Tensor weighted_total(Graph& g, const std::vector<LossTerm>& terms) {
  Tensor total;
  for (const LossTerm& t : terms) {
    Tensor part = scale(g, t.value, t.weight);
    total = total.defined() ? add(g, total, part) : std::move(part);
  }
  return total;
}

void log_terms(TrainState& s, const std::vector<LossTerm>& terms) {
  double pl = 0.0;
  bool any_pl = false;
  for (const LossTerm& t : terms) {
    if (t.name.rfind("pl_", 0) == 0) {
      pl += t.value.item();
      any_pl = true;
    } else {
      s.history[t.name].push_back(t.value.item());
    }
  }
  if (any_pl) s.history["pl_ce"].push_back(pl);
}

void run_step(TrainState& s, Graph& g, std::vector<LossTerm>& terms, StepEvent::Stage stage, const TrainHooks& hooks) {
  Tensor total = weighted_total(g, terms);
  if (!std::isfinite(total.item())) {
    throw NumericError("non-finite loss at iteration " + std::to_string(s.iteration));
  }
  StepEvent ev{s.iteration, stage, &g, &terms, &s};
  if (hooks.before_backward) hooks.before_backward(ev);
  zero_grads(all_parameters(s));
  g.backward(total);
  if (hooks.after_backward) hooks.after_backward(ev);
  log_terms(s, terms);
}

LabelMap pl_batch(const Refinement& r, std::size_t target, const std::vector<std::size_t>& idx) {
  const auto& maps = r.labels.at(target);
  const LabelMap& first = maps.at(idx[0]);
  LabelMap out(idx.size(), first.h, first.w, 0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const LabelMap& m = maps.at(idx[k]);
    std::copy(m.values.begin(), m.values.end(), out.values.begin() + k * first.h * first.w);
  }
  return out;
}

void disc_update(TrainState& s, const std::vector<std::pair<std::string, DiscriminatorParams*>>& discs) {
  for (const auto& [key, d] : discs) adam_step(d->parameters(), s.adam[key], s.cfg.disc_lr);
}

// One full iteration for every method.
void iterate(TrainState& s, const std::vector<const DomainDataset*>& targets, const DomainDataset& source,
             const TrainHooks& hooks) {
  const TrainConfig& cfg = s.cfg;
  const Representation rep = cfg.representation;
  const auto src_idx = s.source_sampler.next(cfg.batch_size);
  const Tensor xs = source.batch_images(src_idx);
  const LabelMap ys = source.batch_labels(src_idx);
  const std::size_t H = xs.dim(2), W = xs.dim(3);
  std::vector<Tensor> xt;
  std::vector<std::vector<std::size_t>> tidx;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    tidx.push_back(s.target_samplers[n].next(cfg.batch_size));
    xt.push_back(targets[n]->batch_images(tidx.back()));
  }

  Graph g;
  const Tensor fs = extract_features(g, s.segmenter, xs);
  std::vector<Tensor> ft;
  for (const Tensor& x : xt) ft.push_back(extract_features(g, s.segmenter, x));

  std::vector<LossTerm> terms;
  // Detached discriminator inputs gathered during the segmenter step.
  std::vector<Tensor> q_src_d, q_tgt_d;
  const Refinement& ref = s.refine;

  switch (cfg.method) {
    case Method::SourceOnly: {
      SoftMaps ps = head_forward(g, s.segmenter, fs, kMainHead, H, W);
      terms.push_back({"seg", seg_loss(g, ps.probs, ys), 1.0});
      break;
    }
    case Method::SingleTarget:
    case Method::MultiTargetBaseline: {
      SoftMaps ps = head_forward(g, s.segmenter, fs, kMainHead, H, W);
      SoftMaps pt = head_forward(g, s.segmenter, ft[0], kMainHead, H, W);
      Tensor qt = representation(g, pt.probs, rep);
      terms.push_back({"seg", seg_loss(g, ps.probs, ys), 1.0});
      terms.push_back({"adv", adv_fool_loss(g, s.bank.source_target.at(1), qt), cfg.weights.lambda_adv});
      if (ref.active) terms.push_back({"pl_main", seg_loss(g, pt.probs, pl_batch(ref, 0, tidx[0])), cfg.pl_weight});
      q_src_d.push_back(representation(g, ps.probs, rep).detach());
      q_tgt_d.push_back(qt.detach());
      break;
    }
    case Method::MultiDis: {
      SoftMaps ps = head_forward(g, s.segmenter, fs, kMainHead, H, W);
      std::vector<Tensor> qt;
      for (const Tensor& f : ft) qt.push_back(representation(g, head_forward(g, s.segmenter, f, kMainHead, H, W).probs, rep));
      std::vector<const Tensor*> qptr;
      for (const Tensor& q : qt) qptr.push_back(&q);
      MultiDisSegLoss l = multidis_total_segmenter_loss(g, ps.probs, ys, qptr, s.bank, cfg.weights, hooks.union_batch);
      terms.push_back({"seg", std::move(l.seg), 1.0});
      terms.push_back({"adv_s", std::move(l.adv_s), cfg.weights.lambda_s});
      terms.push_back({"adv_t", std::move(l.adv_t), cfg.weights.lambda_t});
      q_src_d.push_back(representation(g, ps.probs, rep).detach());
      for (const Tensor& q : qt) q_tgt_d.push_back(q.detach());
      break;
    }
    case Method::MTKT: {
      const std::size_t T = targets.size();
      const bool phase2 = s.iteration >= cfg.warmup_iters;
      const bool agn_pl = ref.active && ref.strategy == PLStrategy::TeacherPlusAgnostic;
      std::vector<Tensor> teachers, students;
      for (std::size_t n = 1; n <= T; ++n) {
        const std::string head = spec_head(n);
        SoftMaps ps = head_forward(g, s.segmenter, fs, head, H, W);
        SoftMaps pt = head_forward(g, s.segmenter, ft[n - 1], head, H, W);
        Tensor qt = representation(g, pt.probs, rep);
        terms.push_back({"seg_" + head, seg_loss(g, ps.probs, ys), 1.0});
        terms.push_back({"adv_" + head, adv_fool_loss(g, s.bank.source_target.at(n), qt), cfg.weights.lambda_adv});
        if (ref.active) {
          terms.push_back({"pl_" + head, seg_loss(g, pt.probs, pl_batch(ref, n - 1, tidx[n - 1])), cfg.pl_weight});
        }
        q_src_d.push_back(representation(g, ps.probs, rep).detach());
        q_tgt_d.push_back(qt.detach());
        teachers.push_back(std::move(pt.probs));
      }
      if (phase2 || agn_pl) {
        for (std::size_t n = 1; n <= T; ++n) {
          students.push_back(std::move(head_forward(g, s.segmenter, ft[n - 1], kAgnosticHead, H, W).probs));
        }
      }
      if (phase2) {
        std::vector<const Tensor*> tp, sp;
        for (std::size_t n = 0; n < T; ++n) {
          tp.push_back(&teachers[n]);
          sp.push_back(&students[n]);
        }
        std::vector<std::vector<double>> masks;
        std::vector<const std::vector<double>*> mask_ptrs;
        if (ref.active && ref.strategy == PLStrategy::TeacherPlusKLMask) {
          for (std::size_t n = 0; n < T; ++n) {
            masks.push_back(kl_agreement_mask(pl_batch(ref, n, tidx[n]), argmax_channel(students[n])));
          }
          for (const auto& m : masks) mask_ptrs.push_back(&m);
        }
        terms.push_back({"kl", mtkt_agnostic_loss(g, tp, sp, mask_ptrs), cfg.kl_weight});
        if (cfg.agn_source_ce) {
          SoftMaps pa = head_forward(g, s.segmenter, fs, kAgnosticHead, H, W);
          terms.push_back({"seg_agn", seg_loss(g, pa.probs, ys), 1.0});
        }
        if (cfg.agn_adversarial) {
          Tensor adv = Tensor::scalar(0.0);
          for (std::size_t n = 1; n <= T; ++n) {
            adv = add(g, adv, adv_fool_loss(g, s.bank.source_target.at(n), representation(g, students[n - 1], rep)));
          }
          terms.push_back({"adv_agn", scale(g, adv, 1.0 / static_cast<double>(T)), cfg.weights.lambda_adv});
        }
      }
      if (agn_pl) {
        for (std::size_t n = 1; n <= T; ++n) {
          terms.push_back({"pl_agn_" + std::to_string(n),
                           seg_loss(g, students[n - 1], pl_batch(ref, n - 1, tidx[n - 1])), cfg.pl_weight});
        }
      }
      break;
    }
  }

  run_step(s, g, terms, StepEvent::Stage::Segmenter, hooks);
  sgd_step(s.segmenter.parameters(), s.sgd, cfg.seg_lr, cfg.seg_momentum, cfg.seg_weight_decay);

  if (cfg.method == Method::SourceOnly) return;

  Graph gd;
  std::vector<LossTerm> dterms;
  std::vector<std::pair<std::string, DiscriminatorParams*>> discs;
  switch (cfg.method) {
    case Method::SingleTarget:
    case Method::MultiTargetBaseline:
      dterms.push_back({"disc", disc_loss_single(gd, s.bank.source_target.at(1), q_src_d[0], q_tgt_d[0]), 1.0});
      discs.emplace_back(st_key(1), &s.bank.source_target.at(1));
      break;
    case Method::MultiDis: {
      std::vector<const Tensor*> qptr;
      for (const Tensor& q : q_tgt_d) qptr.push_back(&q);
      MultiDisDiscLosses l = multidis_disc_losses(gd, s.bank, q_src_d[0], qptr, hooks.union_batch);
      dterms.push_back({"disc_st", std::move(l.l_dst), 1.0});
      if (!l.l_dt_undefined) dterms.push_back({"disc_tt", std::move(l.l_dt), 1.0});
      for (auto& [n, d] : s.bank.source_target) discs.emplace_back(st_key(n), &d);
      for (auto& [n, d] : s.bank.target_target) discs.emplace_back(tt_key(n), &d);
      break;
    }
    case Method::MTKT:
      for (std::size_t n = 1; n <= targets.size(); ++n) {
        dterms.push_back({"disc_" + spec_head(n),
                          disc_loss_single(gd, s.bank.source_target.at(n), q_src_d[n - 1], q_tgt_d[n - 1]), 1.0});
        discs.emplace_back(st_key(n), &s.bank.source_target.at(n));
      }
      break;
    case Method::SourceOnly:
      break;
  }
  run_step(s, gd, dterms, StepEvent::Stage::Discriminator, hooks);
  disc_update(s, discs);
}

}  // namespace

TrainState init_train_state(const TrainConfig& cfg, const TrainData& data) {
  cfg.validate();
  check_data(cfg, data);
  TrainState s;
  s.cfg = cfg;
  s.segmenter = init_segmenter(cfg.arch, segmenter_heads(cfg.method, cfg.T), derive_seed(cfg.seed, "segmenter"));
  auto add_disc = [&](std::map<std::size_t, DiscriminatorParams>& m, std::size_t n, const std::string& key) {
    m.emplace(n, init_discriminator(cfg.arch, derive_seed(cfg.seed, "disc." + key)));
    s.adam.emplace(key, AdamState{});
  };
  switch (cfg.method) {
    case Method::SourceOnly:
      break;
    case Method::SingleTarget:
    case Method::MultiTargetBaseline:
      add_disc(s.bank.source_target, 1, st_key(1));
      break;
    case Method::MultiDis:
      for (std::size_t n = 1; n <= cfg.T; ++n) add_disc(s.bank.source_target, n, st_key(n));
      if (cfg.T >= 2) {
        for (std::size_t n = 1; n <= cfg.T; ++n) add_disc(s.bank.target_target, n, tt_key(n));
      }
      break;
    case Method::MTKT:
      for (std::size_t n = 1; n <= cfg.T; ++n) add_disc(s.bank.source_target, n, st_key(n));
      break;
  }
  s.source_sampler = BatchSampler(domain_groups(*data.source), derive_seed(cfg.seed, "sampler.source"));
  SampledTargets st = sampled_targets(cfg, data);
  for (std::size_t n = 0; n < st.sets.size(); ++n) {
    s.target_samplers.emplace_back(domain_groups(*st.sets[n]),
                                   derive_seed(cfg.seed, "sampler.target." + std::to_string(n + 1)));
  }
  return s;
}

void run_training(TrainState& state, const TrainData& data, std::size_t until_iter, const TrainHooks& hooks) {
  check_data(state.cfg, data);
  SampledTargets st = sampled_targets(state.cfg, data);
  if (st.sets.size() != state.target_samplers.size()) throw ContractError("target datasets do not match the state");
  while (state.iteration < until_iter) {
    iterate(state, st.sets, *data.source, hooks);
    ++state.iteration;
  }
}

TrainState train(const TrainConfig& cfg, const TrainData& data, const TrainHooks& hooks) {
  TrainState s = init_train_state(cfg, data);
  run_training(s, data, cfg.iters, hooks);
  return s;
}

namespace {
TrainState train_as(Method m, TrainConfig cfg, const DomainDataset& source,
                    const std::vector<const DomainDataset*>& targets, const TrainHooks& hooks) {
  if (cfg.method != m) throw ContractError("config method is " + to_string(cfg.method) + ", expected " + to_string(m));
  return train(cfg, TrainData{&source, targets}, hooks);
}
}  // namespace

TrainState train_single_target(const TrainConfig& cfg, const DomainDataset& source, const DomainDataset& target,
                               const TrainHooks& hooks) {
  return train_as(Method::SingleTarget, cfg, source, {&target}, hooks);
}

TrainState train_multi_target_baseline(const TrainConfig& cfg, const DomainDataset& source,
                                       const std::vector<const DomainDataset*>& targets, const TrainHooks& hooks) {
  return train_as(Method::MultiTargetBaseline, cfg, source, targets, hooks);
}

TrainState train_multidis(const TrainConfig& cfg, const DomainDataset& source,
                          const std::vector<const DomainDataset*>& targets, const TrainHooks& hooks) {
  return train_as(Method::MultiDis, cfg, source, targets, hooks);
}

TrainState train_mtkt(const TrainConfig& cfg, const DomainDataset& source,
                      const std::vector<const DomainDataset*>& targets, const TrainHooks& hooks) {
  return train_as(Method::MTKT, cfg, source, targets, hooks);
}

TrainState train_source_only(const TrainConfig& cfg, const DomainDataset& source, const TrainHooks& hooks) {
  return train_as(Method::SourceOnly, cfg, source, {}, hooks);
}

Tensor predict_probs(const TrainState& state, const Tensor& images, const std::string& head) {
  Graph g = Graph::no_grad();
  const std::string& id = head.empty() ? deployment_head(state.cfg.method) : head;
  return segmenter_forward(g, state.segmenter, images, id).probs;
}

LabelMap predict(const TrainState& state, const Tensor& images) {
  return argmax_channel(predict_probs(state, images));
}

}  // namespace mtuda
