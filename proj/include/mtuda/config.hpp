#pragma once

// Experiment configuration files. Grammar: docs/config_grammar.md.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtuda/pseudo_label.hpp"
#include "mtuda/synth.hpp"
#include "mtuda/trainers.hpp"

namespace mtuda {

struct ExperimentConfig {
  TrainConfig train;

  // [data]
  std::string source = "synth";
  std::vector<std::string> targets;
  std::vector<std::string> transfer;  // evaluation-only domains
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t train_scenes = 200;
  std::size_t val_scenes = 50;
  std::uint64_t data_seed = 0;

  // [domain.<id>]: inline specs; ids not listed here must be presets.
  std::map<std::string, DomainSpec> domains;

  // [output]
  std::string output_dir = "out";
  std::size_t checkpoint_every = 0;  // 0: only at the end

  // [refine]
  PLStrategy strategy = PLStrategy::TeacherOnly;
  std::size_t refine_iters = 0;  // 0: a quarter of train.iters
  double keep_fraction = 0.5;

  std::size_t effective_refine_iters() const;
  /// Resolved spec of a domain id (inline block or preset).
  DomainSpec domain(const std::string& id) const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Throws ConfigError with "line N: ..." diagnostics.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Canonical text; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& c);
/// FNV-1a of the canonical text without the [output] section.
std::uint64_t config_hash(const ExperimentConfig& c);
std::string hash_hex(std::uint64_t h);

}  // namespace mtuda
