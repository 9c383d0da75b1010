// mtuda: generate | train | eval | refine | report
//
// Every subcommand reads one config file. MTUDA_OUTPUT_DIR, when set,
// replaces the config's [output] dir.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mtuda/checkpoint.hpp"
#include "mtuda/config.hpp"
#include "mtuda/errors.hpp"
#include "mtuda/experiment.hpp"
#include "mtuda/metrics.hpp"

namespace fs = std::filesystem;
using namespace mtuda;

namespace {

fs::path output_dir(const ExperimentConfig& c) {
  if (const char* env = std::getenv("MTUDA_OUTPUT_DIR"); env && *env) return env;
  return c.output_dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + p.string());
  f << text;
}

int check_threshold(const EvalReport& r, const std::optional<double>& min_miou) {
  if (!min_miou) return 0;
  if (r.miou_avg * 100.0 >= *min_miou) return 0;
  std::cerr << "mIoU Avg. " << r.miou_avg * 100.0 << " is below the required " << *min_miou << '\n';
  return 3;
}

// Ensures the checkpoint's structure fits the config before evaluating it.
void check_heads(const ExperimentConfig& c, const TrainState& s) {
  if (s.cfg.arch != c.train.arch || s.cfg.num_classes != c.train.num_classes) {
    throw ConfigError("checkpoint architecture differs from the config's [arch]");
  }
  if (!s.segmenter.has_head(deployment_head(s.cfg.method))) {
    throw ConfigError("checkpoint lacks the deployment head '" + deployment_head(s.cfg.method) + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-target domain adaptation for semantic segmentation"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, baseline_path, report_path;
  std::vector<std::string> transfer;
  std::optional<double> assert_miou;
  std::optional<std::size_t> stop_after;
  bool resume = false;

  auto* gen = app.add_subcommand("generate", "Write the configured datasets to <output>/data");
  gen->add_option("config", config_path, "Experiment config")->required();

  auto* train = app.add_subcommand("train", "Train the configured method");
  train->add_option("config", config_path, "Experiment config")->required();
  train->add_flag("--resume", resume, "Continue from <output>/checkpoint.mtck");
  train->add_option("--stop-after", stop_after, "Stop at this iteration (a checkpoint is written)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the validation splits");
  eval->add_option("config", config_path, "Experiment config")->required();
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint (default <output>/checkpoint.mtck)");
  eval->add_option("--transfer", transfer, "Extra unseen domain to evaluate (repeatable)");
  eval->add_option("--baseline", baseline_path, "Machine-readable report to diff against");
  eval->add_option("--assert-miou", assert_miou, "Fail unless mIoU Avg. (percent) reaches this value");

  auto* refine = app.add_subcommand("refine", "Pseudo-label refinement of a trained checkpoint");
  refine->add_option("config", config_path, "Experiment config")->required();
  refine->add_option("--checkpoint", checkpoint_path, "Checkpoint (default <output>/checkpoint.mtck)");
  refine->add_option("--assert-miou", assert_miou, "Fail unless the refined mIoU Avg. (percent) reaches this value");

  auto* report = app.add_subcommand("report", "Render a machine-readable report as a table");
  report->add_option("report", report_path, "Report file (.tsv)")->required();
  report->add_option("--baseline", baseline_path, "Report to diff against");
  report->add_option("--assert-miou", assert_miou, "Fail unless mIoU Avg. (percent) reaches this value");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      const EvalReport r = parse_machine_report(read_file(report_path));
      std::optional<EvalReport> base;
      if (!baseline_path.empty()) base = parse_machine_report(read_file(baseline_path));
      std::cout << render_report(r, base);
      return check_threshold(r, assert_miou);
    }

    ExperimentConfig cfg = load_config(config_path);
    for (const auto& t : transfer) {
      if (std::find(cfg.transfer.begin(), cfg.transfer.end(), t) == cfg.transfer.end()) cfg.transfer.push_back(t);
    }
    cfg.validate();
    const fs::path out = output_dir(cfg);
    const fs::path data_root = out / "data";
    const fs::path ckpt = checkpoint_path.empty() ? out / kCheckpointFile : fs::path(checkpoint_path);

    if (gen->parsed()) {
      const ExperimentData d = build_data(cfg);
      write_data(d, data_root);
      write_file(out / "config.cfg", serialize_config(cfg));
      std::cout << "wrote datasets under " << data_root.string() << " (config " << hash_hex(config_hash(cfg))
                << ")\n";
      return 0;
    }

    const ExperimentData d = load_or_build_data(cfg, data_root);

    if (train->parsed()) {
      TrainRunOptions opt;
      opt.out_dir = out;
      opt.checkpoint_every = cfg.checkpoint_every;
      opt.stop_after = stop_after;
      opt.resume = resume;
      opt.progress = &std::cerr;
      const TrainState s = run_checkpointed_training(cfg, d, opt);
      write_file(out / "config.cfg", serialize_config(cfg));
      std::cout << "trained " << to_string(s.cfg.method) << " to iteration " << s.iteration << "; checkpoint "
                << (out / kCheckpointFile).string() << '\n';
      return 0;
    }

    const TrainState state = load_checkpoint(ckpt);
    check_heads(cfg, state);
    std::vector<const DomainDataset*> sets = d.val_sets();
    for (const auto* t : d.transfer_sets()) sets.push_back(t);
    const std::string header = provenance_header(cfg, sets) + "# checkpoint_hash " +
                               hash_hex(fnv1a64(encode_checkpoint(state))) + '\n';

    if (eval->parsed()) {
      const EvalReport r = evaluate(state, sets);
      std::optional<EvalReport> base;
      if (!baseline_path.empty()) base = parse_machine_report(read_file(baseline_path));
      const std::string table = render_report(r, base);
      write_file(out / "report.tsv", header + machine_report(r));
      write_file(out / "report.txt", header + table);
      std::cout << table;
      return check_threshold(r, assert_miou);
    }

    if (refine->parsed()) {
      const EvalReport before = evaluate(state, sets);
      const TrainState refined = refine_for_config(cfg, state, d);
      save_checkpoint(out / "refined.mtck", refined);
      const EvalReport after = evaluate(refined, sets);
      write_file(out / "report_before.tsv", header + machine_report(before));
      write_file(out / "report_after.tsv", header + machine_report(after));
      const std::string table = render_report(after, before);
      write_file(out / "refine_delta.txt", header + "# strategy " + to_string(cfg.strategy) + "\n" + table);
      std::cout << table;
      return check_threshold(after, assert_miou);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
