#include "mtuda/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mtuda/checkpoint.hpp"
#include "mtuda/dataset_io.hpp"
#include "mtuda/errors.hpp"
#include "mtuda/rng.hpp"

namespace fs = std::filesystem;

namespace mtuda {

TrainData ExperimentData::train_data() const {
  TrainData d;
  d.source = &source_train;
  for (const auto& t : target_train) d.targets.push_back(&t);
  return d;
}

std::vector<const DomainDataset*> ExperimentData::val_sets() const {
  std::vector<const DomainDataset*> out;
  for (const auto& v : target_val) out.push_back(&v);
  return out;
}

std::vector<const DomainDataset*> ExperimentData::transfer_sets() const {
  std::vector<const DomainDataset*> out;
  for (const auto& v : transfer_val) out.push_back(&v);
  return out;
}

DomainDataset make_split(const ExperimentConfig& c, const std::string& id, bool val) {
  const DomainSpec spec = c.domain(id);
  const std::uint64_t seed = derive_seed(c.data_seed, "data." + id);
  const bool is_source = id == c.source;
  if (val) return generate_dataset(spec, c.val_scenes, seed, c.height, c.width, true, c.train_scenes);
  return generate_dataset(spec, c.train_scenes, seed, c.height, c.width, is_source, 0);
}

ExperimentData build_data(const ExperimentConfig& c) {
  ExperimentData d;
  d.source_train = make_split(c, c.source, false);
  for (const auto& t : c.targets) {
    d.target_train.push_back(make_split(c, t, false));
    d.target_val.push_back(make_split(c, t, true));
  }
  for (const auto& t : c.transfer) d.transfer_val.push_back(make_split(c, t, true));
  return d;
}

namespace {

DomainDataset load_or_make(const ExperimentConfig& c, const fs::path& root, const std::string& id, bool val) {
  const fs::path dir = root / id / (val ? "val" : "train");
  if (fs::exists(dir / "manifest.txt")) return read_dataset(dir);
  return make_split(c, id, val);
}

}  // namespace

ExperimentData load_or_build_data(const ExperimentConfig& c, const fs::path& root) {
  ExperimentData d;
  d.source_train = load_or_make(c, root, c.source, false);
  for (const auto& t : c.targets) {
    d.target_train.push_back(load_or_make(c, root, t, false));
    d.target_val.push_back(load_or_make(c, root, t, true));
  }
  for (const auto& t : c.transfer) d.transfer_val.push_back(load_or_make(c, root, t, true));
  return d;
}

void write_data(const ExperimentData& d, const fs::path& root) {
  write_dataset(root / d.source_train.domain_id() / "train", d.source_train);
  for (const auto& t : d.target_train) write_dataset(root / t.domain_id() / "train", t);
  for (const auto& v : d.target_val) write_dataset(root / v.domain_id() / "val", v);
  for (const auto& v : d.transfer_val) write_dataset(root / v.domain_id() / "val", v);
}

std::uint64_t dataset_hash(const DomainDataset& ds) {
  std::uint64_t h = fnv1a64(ds.domain_id());
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto v = ds.image(i).values();
    mix(v.data(), v.size() * sizeof(double));
    const auto& l = ds.ground_truth(i).values;
    mix(l.data(), l.size() * sizeof(std::int32_t));
    mix(ds.scene_domain(i).data(), ds.scene_domain(i).size());
  }
  return h;
}

namespace {

// Keeps the log lines of iterations before `iter`.
void truncate_metrics(const fs::path& path, std::size_t iter) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::ostringstream kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') {
      kept << line << '\n';
      continue;
    }
    if (std::stoull(line.substr(0, line.find('\t'))) < iter) kept << line << '\n';
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept.str();
}

}  // namespace

TrainState run_checkpointed_training(const ExperimentConfig& c, const ExperimentData& d, const TrainRunOptions& opt) {
  fs::create_directories(opt.out_dir);
  const fs::path ckpt = opt.out_dir / kCheckpointFile;
  const fs::path metrics = opt.out_dir / kMetricsFile;
  const std::uint64_t hash = config_hash(c);
  const TrainData data = d.train_data();

  TrainState state;
  if (opt.resume && fs::exists(ckpt)) {
    state = load_checkpoint(ckpt);
    if (state.config_hash != hash) {
      throw ConfigError("refusing to resume: checkpoint " + ckpt.string() + " was written for config " +
                        hash_hex(state.config_hash) + ", the current config hashes to " + hash_hex(hash) +
                        "; start a fresh run or restore the original config");
    }
    truncate_metrics(metrics, state.iteration);
  } else {
    state = init_train_state(c.train, data);
    state.config_hash = hash;
    std::ofstream(metrics, std::ios::trunc) << "# config_hash " << hash_hex(hash) << '\n';
  }

  const std::size_t end = std::min(c.train.iters, opt.stop_after.value_or(c.train.iters));
  std::ofstream log(metrics, std::ios::app);
  std::map<std::string, std::size_t> logged;
  for (const auto& [name, series] : state.history) logged[name] = series.size();
  char buf[64];
  while (state.iteration < end) {
    const std::size_t it = state.iteration;
    run_training(state, data, it + 1);
    for (const auto& [name, series] : state.history) {
      std::size_t& n = logged[name];
      for (; n < series.size(); ++n) {
        std::snprintf(buf, sizeof buf, "%.17g", series[n]);
        log << it << '\t' << name << '\t' << buf << '\n';
      }
    }
    const bool at_mark = c.checkpoint_every && state.iteration % c.checkpoint_every == 0;
    if (at_mark) {
      log.flush();
      save_checkpoint(ckpt, state);
    }
    if (opt.progress && (state.iteration % 100 == 0 || state.iteration == end)) {
      *opt.progress << "iter " << state.iteration << "/" << c.train.iters << '\n';
    }
  }
  log.flush();
  save_checkpoint(ckpt, state);
  return state;
}

TrainState refine_for_config(const ExperimentConfig& c, const TrainState& state, const ExperimentData& d) {
  const Method m = state.cfg.method;
  const TrainData data = d.train_data();
  if (m == Method::MTKT) return refine_mtkt(state, data, c.strategy, c.effective_refine_iters(), c.keep_fraction);
  if (m == Method::MultiTargetBaseline || m == Method::SingleTarget) {
    if (c.strategy != PLStrategy::TeacherOnly) {
      throw ConfigError("strategy " + to_string(c.strategy) + " applies to mtkt only; " + to_string(m) +
                        " supports teacher_only");
    }
    return refine_baseline(state, data, c.effective_refine_iters(), c.keep_fraction);
  }
  throw ConfigError("refinement is not defined for method " + to_string(m));
}

std::string provenance_header(const ExperimentConfig& c, const std::vector<const DomainDataset*>& sets) {
  std::ostringstream os;
  os << "# config_hash " << hash_hex(config_hash(c)) << '\n';
  for (const DomainDataset* s : sets) {
    os << "# dataset " << s->domain_id() << ' ' << s->size() << ' ' << hash_hex(dataset_hash(*s)) << '\n';
  }
  return os.str();
}

}  // namespace mtuda
