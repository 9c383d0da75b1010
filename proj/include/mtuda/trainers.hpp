#pragma once

// Training procedures. Every method runs the same alternating iteration:
//   1. draw one source batch and one batch per target domain;
//   2. segmenter step: build the method's loss with every discriminator
//      frozen, backward, SGD on the segmenter;
//   3. discriminator step: losses on detached maps from the same forward,
//      backward, one Adam step per discriminator.
// All randomness comes from streams derived from TrainConfig::seed.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtuda/losses.hpp"
#include "mtuda/nets.hpp"
#include "mtuda/optim.hpp"
#include "mtuda/pseudo_label.hpp"
#include "mtuda/rng.hpp"
#include "mtuda/synth.hpp"

namespace mtuda {

enum class Method {
  SingleTarget,
  MultiTargetBaseline,
  MultiDis,
  MTKT,
  SourceOnly,  // supervised on source only; the no-adaptation control
};

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct TrainConfig {
  Method method = Method::MultiDis;
  Representation representation = Representation::SelfInformation;
  AdvWeights weights;
  std::size_t iters = 3000;
  std::size_t warmup_iters = 500;
  std::size_t batch_size = 4;
  double seg_lr = 2.5e-4;
  double seg_momentum = 0.9;
  double seg_weight_decay = 1e-4;
  double disc_lr = 1e-4;
  std::uint64_t seed = 0;
  std::size_t T = 2;
  std::size_t num_classes = kNumSuperClasses;
  /// Multiplies the distillation loss, which sums over H*W*C per image.
  double kl_weight = 1.0 / 4096.0;
  bool agn_adversarial = false;
  bool agn_source_ce = false;
  /// Multiplies the pseudo-label cross-entropy terms during refinement.
  double pl_weight = 1.0;
  ArchConfig arch;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Epoch-based sampler over groups of indices (one group per domain): each
/// epoch shuffles every group, then interleaves the groups round-robin.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::vector<std::vector<std::size_t>> groups, std::uint64_t seed);

  std::vector<std::size_t> next(std::size_t batch_size);

  std::string rng_state() const { return rng_.state(); }
  const std::vector<std::size_t>& order() const { return order_; }
  std::size_t cursor() const { return cursor_; }
  const std::vector<std::vector<std::size_t>>& groups() const { return groups_; }
  void restore(const std::string& rng_state, std::vector<std::size_t> order, std::size_t cursor);

  friend bool operator==(const BatchSampler&, const BatchSampler&) = default;

 private:
  void new_epoch();
  std::vector<std::vector<std::size_t>> groups_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Groups of a dataset's indices by scene domain, in order of first appearance.
std::vector<std::vector<std::size_t>> domain_groups(const DomainDataset& ds);

using LossHistory = std::map<std::string, std::vector<double>>;

/// Frozen pseudo-labels of an ongoing refinement.
struct Refinement {
  bool active = false;
  bool baseline = false;  // pseudo-labels on the main head
  PLStrategy strategy = PLStrategy::TeacherOnly;
  double keep_fraction = 0.5;
  std::vector<std::vector<LabelMap>> labels;  // [target][scene]
};

struct TrainState {
  TrainConfig cfg;
  SegmenterParams segmenter;
  DiscriminatorBank bank;
  SgdState sgd;
  std::map<std::string, AdamState> adam;  // "st.<n>", "tt.<n>"
  std::size_t iteration = 0;
  BatchSampler source_sampler;
  std::vector<BatchSampler> target_samplers;
  LossHistory history;
  Refinement refine;
  std::uint64_t config_hash = 0;
};

/// Source plus target datasets. For MultiTargetBaseline, `targets` holds the
/// individual domains; they are merged internally.
struct TrainData {
  const DomainDataset* source = nullptr;
  std::vector<const DomainDataset*> targets;
};

/// One named contribution to a step's loss: the step minimizes
/// sum of weight * value.
struct LossTerm {
  std::string name;
  Tensor value;
  double weight = 1.0;
};

struct StepEvent {
  std::size_t iteration = 0;
  enum class Stage { Segmenter, Discriminator } stage = Stage::Segmenter;
  Graph* graph = nullptr;
  const std::vector<LossTerm>* terms = nullptr;
  TrainState* state = nullptr;
};

struct TrainHooks {
  /// Called after the step's graph is built and before its backward. A hook
  /// may run its own backward passes; all gradients are cleared afterwards.
  std::function<void(StepEvent&)> before_backward;
  /// Called after the step's backward and before the optimizer update.
  std::function<void(StepEvent&)> after_backward;
  UnionHook union_batch;
};

std::string deployment_head(Method m);
std::vector<std::string> segmenter_heads(Method m, std::size_t T);

/// Fresh parameters, optimizer state and samplers. Throws ContractError when
/// the data does not fit the method (labels, number of targets).
TrainState init_train_state(const TrainConfig& cfg, const TrainData& data);

/// Runs iterations until state.iteration == until_iter.
void run_training(TrainState& state, const TrainData& data, std::size_t until_iter, const TrainHooks& hooks = {});

TrainState train_single_target(const TrainConfig& cfg, const DomainDataset& source, const DomainDataset& target,
                               const TrainHooks& hooks = {});
TrainState train_multi_target_baseline(const TrainConfig& cfg, const DomainDataset& source,
                                       const std::vector<const DomainDataset*>& targets, const TrainHooks& hooks = {});
TrainState train_multidis(const TrainConfig& cfg, const DomainDataset& source,
                          const std::vector<const DomainDataset*>& targets, const TrainHooks& hooks = {});
TrainState train_mtkt(const TrainConfig& cfg, const DomainDataset& source,
                      const std::vector<const DomainDataset*>& targets, const TrainHooks& hooks = {});
TrainState train_source_only(const TrainConfig& cfg, const DomainDataset& source, const TrainHooks& hooks = {});
/// Dispatches on cfg.method.
TrainState train(const TrainConfig& cfg, const TrainData& data, const TrainHooks& hooks = {});

/// Soft maps of the deployment head for a [N, 3, H, W] batch.
Tensor predict_probs(const TrainState& state, const Tensor& images, const std::string& head = "");
/// Argmax of the deployment head (main, or agn for MTKT); ties -> lowest class.
LabelMap predict(const TrainState& state, const Tensor& images);

}  // namespace mtuda
