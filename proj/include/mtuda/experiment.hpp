#pragma once

// Experiment orchestration shared by the command-line tool and the
// acceptance runner: dataset materialization, checkpointed training,
// evaluation and refinement.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtuda/config.hpp"
#include "mtuda/metrics.hpp"
#include "mtuda/synth.hpp"
#include "mtuda/trainers.hpp"

namespace mtuda {

struct ExperimentData {
  DomainDataset source_train;
  std::vector<DomainDataset> target_train;  // unlabeled
  std::vector<DomainDataset> target_val;    // evaluation splits
  std::vector<DomainDataset> transfer_val;  // domains never trained on

  TrainData train_data() const;
  std::vector<const DomainDataset*> val_sets() const;
  std::vector<const DomainDataset*> transfer_sets() const;
};

/// Scenes of domain `id`: the train split uses scene indices [0, train_scenes),
/// the val split the next val_scenes, both from derive_seed(data seed, "data.<id>").
DomainDataset make_split(const ExperimentConfig& c, const std::string& id, bool val);

/// Generates every split in memory.
ExperimentData build_data(const ExperimentConfig& c);

/// Reads splits written by write_data under `root`, generating any that are missing.
ExperimentData load_or_build_data(const ExperimentConfig& c, const std::filesystem::path& root);

/// <root>/<domain>/{train,val}.
void write_data(const ExperimentData& d, const std::filesystem::path& root);

/// FNV-1a over a dataset's ids, images and ground truth.
std::uint64_t dataset_hash(const DomainDataset& ds);

struct TrainRunOptions {
  std::filesystem::path out_dir;
  std::size_t checkpoint_every = 0;
  std::optional<std::size_t> stop_after;  // stop (with a checkpoint) at this iteration
  bool resume = false;
  std::ostream* progress = nullptr;
};

inline const char* const kCheckpointFile = "checkpoint.mtck";
inline const char* const kMetricsFile = "metrics.tsv";

/// Runs (or resumes) training with checkpoints and the `iter<TAB>name<TAB>value`
/// metrics log. Resuming refuses a checkpoint whose config hash differs.
TrainState run_checkpointed_training(const ExperimentConfig& c, const ExperimentData& d, const TrainRunOptions& opt);

/// Refinement matching the state's method and the configured strategy.
/// Baselines accept only teacher_only; other combinations throw ConfigError.
TrainState refine_for_config(const ExperimentConfig& c, const TrainState& state, const ExperimentData& d);

/// Report header lines ("# key value"): config hash and dataset hashes.
std::string provenance_header(const ExperimentConfig& c, const std::vector<const DomainDataset*>& sets);

}  // namespace mtuda
