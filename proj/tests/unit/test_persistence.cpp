#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mtuda/checkpoint.hpp"
#include "mtuda/dataset_io.hpp"
#include "mtuda/errors.hpp"
#include "mtuda/experiment.hpp"
#include "test_util.hpp"

using namespace mtuda;
using testutil::TinyData;
using testutil::tiny_config;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtuda_persist_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool same_dataset(const DomainDataset& a, const DomainDataset& b) {
  if (a.domain_id() != b.domain_id() || a.labeled() != b.labeled() || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.scene_domain(i) != b.scene_domain(i)) return false;
    if (a.ground_truth(i).values != b.ground_truth(i).values) return false;
    if (a.image(i).shape() != b.image(i).shape()) return false;
    if (!std::equal(a.image(i).values().begin(), a.image(i).values().end(), b.image(i).values().begin())) return false;
  }
  return true;
}

ExperimentConfig tiny_experiment(Method m, const fs::path& out) {
  ExperimentConfig c;
  c.train = tiny_config(m, 2, 8);
  c.targets = {"euro", "india"};
  c.height = c.width = 32;
  c.train_scenes = 4;
  c.val_scenes = 2;
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwiseForEveryMethod) {
  TinyData d(2, 4);
  for (Method m : {Method::MultiTargetBaseline, Method::MultiDis, Method::MTKT}) {
    const TrainState s = train(tiny_config(m, 2, 5), d.data());
    const std::string bytes = encode_checkpoint(s);
    const TrainState back = decode_checkpoint(bytes);
    EXPECT_TRUE(states_equal(s, back)) << to_string(m);
    EXPECT_EQ(encode_checkpoint(back), bytes) << to_string(m);
    EXPECT_EQ(back.cfg, s.cfg);
    EXPECT_EQ(back.history, s.history);
  }
  TinyData one(1, 4);
  const TrainState st = train(tiny_config(Method::SingleTarget, 1, 3), one.data());
  EXPECT_TRUE(states_equal(st, decode_checkpoint(encode_checkpoint(st))));
}

TEST(Checkpoint, FileRoundTrip) {
  TinyData d(2, 4);
  const TrainState s = train(tiny_config(Method::MultiDis, 2, 3), d.data());
  const fs::path dir = scratch("file");
  save_checkpoint(dir / "a.mtck", s);
  EXPECT_TRUE(states_equal(load_checkpoint(dir / "a.mtck"), s));
  EXPECT_EQ(slurp(dir / "a.mtck"), encode_checkpoint(s));
  EXPECT_FALSE(fs::exists(dir / "a.mtck.tmp"));
}

TEST(Checkpoint, CorruptInputsRejected) {
  TinyData d(2, 4);
  const std::string bytes = encode_checkpoint(train(tiny_config(Method::MTKT, 2, 4), d.data()));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 40)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "z"), FormatError);
  EXPECT_THROW(decode_checkpoint(""), FormatError);
}

TEST(Checkpoint, ContentsExposeNamedRecords) {
  TinyData d(2, 4);
  const TrainState s = train(tiny_config(Method::MultiDis, 2, 2), d.data());
  const CheckpointContents c = read_checkpoint_contents(encode_checkpoint(s));
  EXPECT_NE(c.header.find("\"iteration\""), std::string::npos);
  std::set<std::string> names;
  for (const auto& r : c.records) names.insert(r.name);
  EXPECT_TRUE(names.count("seg.feat.0.weight"));
  auto has_prefix = [&](const std::string& p) {
    return std::any_of(names.begin(), names.end(), [&](const std::string& n) { return n.rfind(p, 0) == 0; });
  };
  EXPECT_TRUE(has_prefix("disc.tt.2."));
  EXPECT_TRUE(has_prefix("opt.sgd."));
  EXPECT_TRUE(has_prefix("opt.adam.st.1.m."));
  EXPECT_TRUE(names.count("history.seg"));
}

TEST(Checkpoint, RefusesActiveRefinement) {
  TinyData d(2, 4);
  TrainState s = train(tiny_config(Method::MTKT, 2, 4), d.data());
  s.refine.active = true;
  EXPECT_THROW(encode_checkpoint(s), ContractError);
}

TEST(Resume, InMemoryInterruptionIsBitwiseInvisible) {
  TinyData d(2, 4);
  for (Method m : {Method::MultiTargetBaseline, Method::MultiDis, Method::MTKT}) {
    const TrainConfig c = tiny_config(m, 2, 8);
    const TrainState full = train(c, d.data());
    TrainState part = init_train_state(c, d.data());
    run_training(part, d.data(), 3);
    TrainState resumed = decode_checkpoint(encode_checkpoint(part));
    run_training(resumed, d.data(), 8);
    EXPECT_TRUE(states_equal(full, resumed)) << to_string(m);
  }
}

TEST(Resume, CheckpointedRunMatchesUninterruptedRun) {
  const fs::path a = scratch("resume_a"), b = scratch("resume_b");
  ExperimentConfig ca = tiny_experiment(Method::MTKT, a), cb = tiny_experiment(Method::MTKT, b);
  const ExperimentData data = build_data(ca);
  const TrainState full = run_checkpointed_training(ca, data, {a, 0, std::nullopt, false, nullptr});
  TrainRunOptions first{b, 2, std::size_t{5}, false, nullptr};
  const TrainState stopped = run_checkpointed_training(cb, data, first);
  EXPECT_EQ(stopped.iteration, 5u);
  TrainRunOptions second{b, 2, std::nullopt, true, nullptr};
  const TrainState resumed = run_checkpointed_training(cb, data, second);
  // The config hash excludes [output], so both states carry the same value.
  EXPECT_TRUE(states_equal(full, resumed));
  EXPECT_EQ(slurp(a / kCheckpointFile), slurp(b / kCheckpointFile));
  EXPECT_EQ(slurp(a / kMetricsFile), slurp(b / kMetricsFile));
}

TEST(Resume, ConfigChangeRefused) {
  const fs::path dir = scratch("resume_hash");
  ExperimentConfig c = tiny_experiment(Method::MultiDis, dir);
  const ExperimentData data = build_data(c);
  run_checkpointed_training(c, data, {dir, 0, std::size_t{2}, false, nullptr});
  c.train.weights.lambda_s = 0.5;
  try {
    run_checkpointed_training(c, data, {dir, 0, std::nullopt, true, nullptr});
    FAIL() << "resume with a different config was accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("config"), std::string::npos);
  }
}

TEST(Dataset, FilesRoundTripBitwise) {
  const fs::path dir = scratch("files");
  Rng r(3);
  const Tensor img = testutil::random_tensor(r, {3, 5, 7}, 0.0, 1.0);
  write_image_file(dir / "x.img", img);
  const Tensor back = read_image_file(dir / "x.img");
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_TRUE(std::equal(img.values().begin(), img.values().end(), back.values().begin()));
  const LabelMap lab = testutil::random_labels(r, 1, 5, 7, 7, 0.3);
  write_label_file(dir / "x.lbl", lab);
  EXPECT_EQ(read_label_file(dir / "x.lbl").values, lab.values);
  EXPECT_EQ(slurp(dir / "x.img").substr(0, 6), "MTIMG1");
  EXPECT_EQ(slurp(dir / "x.lbl").substr(0, 6), "MTLBL1");
  EXPECT_THROW(read_image_file(dir / "x.lbl"), FormatError);
  EXPECT_THROW(read_label_file(dir / "missing.lbl"), FormatError);
}

TEST(Dataset, DirectoryRoundTripBitwise) {
  const fs::path dir = scratch("dataset");
  const DomainDataset a = generate_dataset(preset("world"), 3, 4, 32, 40, false);
  const DomainDataset b = generate_dataset(preset("euro"), 2, 5, 32, 40, false);
  const DomainDataset merged = merge_datasets({&a, &b});
  write_dataset(dir / "m", merged);
  const DomainDataset back = read_dataset(dir / "m");
  EXPECT_TRUE(same_dataset(merged, back));
  EXPECT_EQ(dataset_hash(back), dataset_hash(merged));
  EXPECT_NE(dataset_hash(a), dataset_hash(b));
  write_dataset(dir / "m2", back);
  for (const auto& e : fs::directory_iterator(dir / "m")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir / "m2" / e.path().filename())) << e.path();
  }
}

TEST(Dataset, ExperimentDataWrittenThenReloaded) {
  const fs::path dir = scratch("expdata");
  ExperimentConfig c = tiny_experiment(Method::MultiDis, dir);
  c.transfer = {"world"};
  const ExperimentData d = build_data(c);
  write_data(d, dir / "data");
  const ExperimentData back = load_or_build_data(c, dir / "data");
  EXPECT_TRUE(same_dataset(d.source_train, back.source_train));
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_TRUE(same_dataset(d.target_train[k], back.target_train[k]));
    EXPECT_TRUE(same_dataset(d.target_val[k], back.target_val[k]));
  }
  EXPECT_TRUE(same_dataset(d.transfer_val[0], back.transfer_val[0]));
  EXPECT_FALSE(back.target_train[0].labeled());
  EXPECT_TRUE(back.target_val[0].labeled());
}
