#include <gtest/gtest.h>

#include <set>

#include "mtuda/errors.hpp"
#include "mtuda/trainers.hpp"
#include "probes.hpp"
#include "test_util.hpp"

using namespace mtuda;
using testutil::TinyData;
using testutil::tiny_config;

namespace {

void expect_same_params(TrainState& a, TrainState& b) {
  EXPECT_EQ(testutil::flat_values(a.segmenter), testutil::flat_values(b.segmenter));
}

}  // namespace

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::SingleTarget, Method::MultiTargetBaseline, Method::MultiDis, Method::MTKT,
                   Method::SourceOnly}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("cyclegan"), ConfigError);
}

TEST(Config, ValidationRejectsInconsistentValues) {
  TrainConfig c = tiny_config(Method::MTKT, 2, 10);
  c.warmup_iters = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(Method::MultiDis, 2);
  c.num_classes = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(Method::MultiDis, 2);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(Method::MultiDis, 2);
  c.warmup_iters = 100;  // only MTKT uses the warm-up
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, DataContractEnforced) {
  TinyData d(2, 4);
  TrainData td = d.data();
  EXPECT_THROW(init_train_state(tiny_config(Method::SingleTarget, 2), td), ContractError);
  EXPECT_THROW(init_train_state(tiny_config(Method::MultiDis, 3), td), ContractError);
  const DomainDataset labeled = d.targets[0].as_labeled(true);
  td.targets[0] = &labeled;
  EXPECT_THROW(init_train_state(tiny_config(Method::MultiDis, 2), td), ContractError);
  const DomainDataset unlabeled_src = d.source.as_labeled(false);
  TrainData bad{&unlabeled_src, {}};
  EXPECT_THROW(init_train_state(tiny_config(Method::SourceOnly, 0), bad), ContractError);
}

TEST(Sampler, EpochsCoverEveryIndexInterleavedByGroup) {
  BatchSampler s({{0, 1, 2}, {3, 4, 5}}, 11);
  std::vector<std::size_t> epoch;
  for (int i = 0; i < 3; ++i) {
    auto b = s.next(2);
    epoch.insert(epoch.end(), b.begin(), b.end());
  }
  std::multiset<std::size_t> seen(epoch.begin(), epoch.end());
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5}));
  for (std::size_t i = 0; i < epoch.size(); ++i) EXPECT_EQ(epoch[i] >= 3, i % 2 == 1);
}

TEST(Sampler, DeterministicAndRestorable) {
  BatchSampler a({{0, 1, 2, 3, 4}}, 5), b({{0, 1, 2, 3, 4}}, 5);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.next(3), b.next(3));
  BatchSampler c({{0, 1, 2, 3, 4}}, 99);
  c.restore(a.rng_state(), a.order(), a.cursor());
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.next(2), c.next(2));
}

TEST(Training, HeadsAndDiscriminatorsPerMethod) {
  EXPECT_EQ(segmenter_heads(Method::MTKT, 3), (std::vector<std::string>{"spec_1", "spec_2", "spec_3", "agn"}));
  EXPECT_EQ(deployment_head(Method::MTKT), "agn");
  EXPECT_EQ(deployment_head(Method::MultiDis), "main");
  TinyData d(3, 4);
  EXPECT_EQ(init_train_state(tiny_config(Method::MultiDis, 3), d.data()).bank.size(), 6u);
  EXPECT_EQ(init_train_state(tiny_config(Method::MTKT, 3), d.data()).bank.size(), 3u);
  EXPECT_EQ(init_train_state(tiny_config(Method::MultiTargetBaseline, 3), d.data()).bank.size(), 1u);
  TrainData src_only{&d.source, {}};
  EXPECT_EQ(init_train_state(tiny_config(Method::SourceOnly, 0), src_only).bank.size(), 0u);
}

TEST(Training, ZeroLambdaEqualsSourceOnly) {
  TinyData d(2, 4);
  TrainConfig c = tiny_config(Method::MultiDis, 2, 8);
  c.weights = {0.0, 0.0, 0.0};
  TrainState md = train(c, d.data());
  TrainConfig so = tiny_config(Method::SourceOnly, 0, 8);
  TrainState base = train(so, TrainData{&d.source, {}});
  expect_same_params(md, base);
  EXPECT_EQ(md.history.at("seg"), base.history.at("seg"));
  c.method = Method::MultiTargetBaseline;
  c.weights.lambda_adv = 0.0;
  TrainState mb = train(c, d.data());
  expect_same_params(mb, base);
}

TEST(Training, BaselineWithOneTargetBitwiseEqualsSingleTarget) {
  TinyData d(1, 4);
  TrainConfig a = tiny_config(Method::SingleTarget, 1, 100);
  TrainConfig b = a;
  b.method = Method::MultiTargetBaseline;
  TrainState sa = train_single_target(a, d.source, d.targets[0]);
  TrainState sb = train_multi_target_baseline(b, d.source, {&d.targets[0]});
  expect_same_params(sa, sb);
  EXPECT_EQ(testutil::flat_values(sa.bank.parameters()), testutil::flat_values(sb.bank.parameters()));
  EXPECT_EQ(sa.history, sb.history);
}

TEST(Training, MultiDisWithOneTargetMatchesSingleTargetLoss) {
  TinyData d(1, 4);
  TrainConfig a = tiny_config(Method::SingleTarget, 1, 10);
  a.weights = {0.01, 0.01, 0.0};
  TrainConfig b = a;
  b.method = Method::MultiDis;
  TrainState sa = train(a, d.data()), sb = train(b, d.data());
  ASSERT_EQ(sb.history.count("disc_tt"), 0u);
  for (std::size_t i = 0; i < 10; ++i) {
    const double la = sa.history.at("seg")[i] + 0.01 * sa.history.at("adv")[i];
    const double lb = sb.history.at("seg")[i] + 0.01 * sb.history.at("adv_s")[i] + 0.0 * sb.history.at("adv_t")[i];
    EXPECT_NEAR(la, lb, 1e-12) << i;
    EXPECT_NEAR(sa.history.at("disc")[i], sb.history.at("disc_st")[i], 1e-12) << i;
  }
}

TEST(Training, DeterministicAcrossRunsAndSplitRuns) {
  TinyData d(2, 4);
  const TrainConfig c = tiny_config(Method::MTKT, 2, 6);
  TrainState a = train(c, d.data()), b = train(c, d.data());
  expect_same_params(a, b);
  EXPECT_EQ(a.history, b.history);
  TrainState s = init_train_state(c, d.data());
  run_training(s, d.data(), 2);
  run_training(s, d.data(), 6);
  expect_same_params(a, s);
  EXPECT_EQ(a.history, s.history);
  EXPECT_EQ(s.iteration, 6u);
}

TEST(Training, SeedChangesTheRun) {
  TinyData d(2, 4);
  TrainConfig c = tiny_config(Method::MultiDis, 2, 2);
  TrainState a = train(c, d.data());
  c.seed = 8;
  TrainState b = train(c, d.data());
  EXPECT_NE(testutil::flat_values(a.segmenter), testutil::flat_values(b.segmenter));
}

TEST(Training, HistoryHasOneEntryPerIterationAndTerm) {
  TinyData d(2, 4);
  TrainState md = train(tiny_config(Method::MultiDis, 2, 6), d.data());
  for (const char* k : {"seg", "adv_s", "adv_t", "disc_st", "disc_tt"}) EXPECT_EQ(md.history.at(k).size(), 6u) << k;
  TrainState mt = train(tiny_config(Method::MTKT, 2, 6), d.data());
  for (const char* k : {"seg_spec_1", "adv_spec_2", "disc_spec_1", "disc_spec_2"}) {
    EXPECT_EQ(mt.history.at(k).size(), 6u) << k;
  }
  EXPECT_EQ(mt.history.at("kl").size(), 3u);
  EXPECT_EQ(mt.history.count("seg_agn"), 0u);
  for (const auto& [k, v] : mt.history) {
    for (double x : v) EXPECT_TRUE(std::isfinite(x)) << k;
  }
}

TEST(Training, EveryDiscriminatorStepsOncePerIteration) {
  TinyData d(3, 4);
  TrainState md = train(tiny_config(Method::MultiDis, 3, 4), d.data());
  ASSERT_EQ(md.adam.size(), 6u);
  for (const auto& [k, a] : md.adam) EXPECT_EQ(a.step, 4u) << k;
  TrainState mt = train(tiny_config(Method::MTKT, 3, 4), d.data());
  ASSERT_EQ(mt.adam.size(), 3u);
  for (const auto& [k, a] : mt.adam) EXPECT_EQ(a.step, 4u) << k;
}

TEST(Partition, SegmenterTermsNeverReachDiscriminatorsAndViceVersa) {
  TinyData d(2, 4);
  for (Method m : {Method::MultiTargetBaseline, Method::MultiDis, Method::MTKT}) {
    TrainConfig c = tiny_config(m, 2, 4);
    c.agn_adversarial = true;
    c.agn_source_ce = true;
    probes::Recorder rec;
    train(c, d.data(), rec.hooks());
    for (const auto& [key, set] : rec.touched) {
      if (probes::starts_with(key, "seg:")) {
        EXPECT_FALSE(probes::any_with_prefix(set, "disc.")) << to_string(m) << " " << key;
        EXPECT_TRUE(probes::any_with_prefix(set, "seg.feat.")) << to_string(m) << " " << key;
      } else {
        EXPECT_TRUE(probes::only_prefixes(set, {"disc."})) << to_string(m) << " " << key;
        EXPECT_FALSE(set.empty()) << to_string(m) << " " << key;
      }
    }
    EXPECT_EQ(rec.events, 8u);
  }
}

TEST(Partition, DistillationNeverReachesSpecificHeads) {
  TinyData d(3, 4);
  probes::Recorder rec;
  rec.filter = [](const std::string& n) { return n == "kl"; };
  train(tiny_config(Method::MTKT, 3, 4), d.data(), rec.hooks());
  const auto& set = rec.touched.at("seg:kl");
  EXPECT_FALSE(probes::any_with_prefix(set, "seg.head.spec_"));
  EXPECT_FALSE(probes::any_with_prefix(set, "disc."));
  EXPECT_TRUE(probes::any_with_prefix(set, "seg.feat."));
  EXPECT_TRUE(probes::any_with_prefix(set, "seg.head.agn."));
}

TEST(Partition, MultiDisTargetTermReachesEveryTargetDiscriminator) {
  TinyData d(3, 4);
  probes::Recorder rec;
  train(tiny_config(Method::MultiDis, 3, 1), d.data(), rec.hooks());
  const auto& tt = rec.touched.at("disc:disc_tt");
  for (int n = 1; n <= 3; ++n) EXPECT_TRUE(probes::any_with_prefix(tt, "disc.tt." + std::to_string(n) + ".")) << n;
  EXPECT_FALSE(probes::any_with_prefix(tt, "disc.st."));
}

TEST(Mtkt, AgnosticHeadFrozenDuringWarmup) {
  TinyData d(2, 4);
  const TrainConfig c = tiny_config(Method::MTKT, 2, 6);
  TrainState s = init_train_state(c, d.data());
  const auto agn0 = testutil::flat_values(s.segmenter.head_parameters(kAgnosticHead));
  const auto spec0 = testutil::flat_values(s.segmenter.head_parameters(spec_head(1)));
  run_training(s, d.data(), c.warmup_iters);
  EXPECT_EQ(testutil::flat_values(s.segmenter.head_parameters(kAgnosticHead)), agn0);
  EXPECT_NE(testutil::flat_values(s.segmenter.head_parameters(spec_head(1))), spec0);
  EXPECT_TRUE(s.sgd.velocity[s.segmenter.parameters().size() - 1].empty());
  run_training(s, d.data(), c.warmup_iters + 1);
  EXPECT_NE(testutil::flat_values(s.segmenter.head_parameters(kAgnosticHead)), agn0);
}

TEST(Union, OneVsAllBatchesForThreeTargets) {
  TinyData d(3, 4);
  std::vector<UnionBatchEvent> events;
  std::vector<std::size_t> batch_n;
  TrainHooks h;
  h.union_batch = [&](const UnionBatchEvent& e) {
    events.push_back(e);
    batch_n.push_back(e.batch->dim(0));
  };
  train(tiny_config(Method::MultiDis, 3, 1), d.data(), h);
  bool saw = false;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.disc_index == 2 && e.label == 0) {
      saw = true;
      EXPECT_EQ(e.member_domains, (std::vector<std::size_t>{1, 3}));
      EXPECT_EQ(e.member_sizes, (std::vector<std::size_t>{2, 2}));
      EXPECT_EQ(batch_n[i], 4u);
    }
    if (e.label == 1) EXPECT_EQ(e.member_domains, (std::vector<std::size_t>{e.disc_index}));
  }
  EXPECT_TRUE(saw);
}

TEST(Predict, DeploymentHeadLabelsEveryPixel) {
  TinyData d(2, 4);
  const TrainState s = train(tiny_config(Method::MTKT, 2, 4), d.data());
  const Tensor x = d.targets[1].batch_images({0, 1, 2});
  const LabelMap y = predict(s, x);
  EXPECT_EQ(y.n, 3u);
  for (auto v : y.values) EXPECT_TRUE(v >= 0 && v < 7);
  EXPECT_EQ(argmax_channel(predict_probs(s, x, kAgnosticHead)).values, y.values);
  EXPECT_THROW(predict_probs(s, x, kMainHead), ConfigError);
}

TEST(Training, WrappersCheckMethod) {
  TinyData d(2, 4);
  EXPECT_THROW(train_mtkt(tiny_config(Method::MultiDis, 2), d.source, {&d.targets[0], &d.targets[1]}),
               ContractError);
}
