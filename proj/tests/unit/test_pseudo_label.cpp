#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mtuda/errors.hpp"
#include "mtuda/pseudo_label.hpp"
#include "mtuda/trainers.hpp"
#include "probes.hpp"
#include "test_util.hpp"

using namespace mtuda;
using testutil::TinyData;
using testutil::tiny_config;

namespace {

// p in [0.5, 1) whose two-class normalized entropy equals e (bisection).
double binary_p_for_entropy(double e) {
  double lo = 0.5, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double h = -(mid * std::log(mid) + (1 - mid) * std::log(1 - mid)) / std::log(2.0);
    (h > e ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// [2, 1, n] map whose pixel i has class 0 and normalized entropy es[i].
Tensor two_class_map(const std::vector<double>& es) {
  const std::size_t n = es.size();
  Tensor t({2, 1, n});
  for (std::size_t i = 0; i < n; ++i) {
    const double p = binary_p_for_entropy(es[i]);
    t.values()[i] = p;
    t.values()[n + i] = 1 - p;
  }
  return t;
}

TrainState trained_mtkt(const TinyData& d, std::size_t T, std::size_t iters = 6) {
  return train(tiny_config(Method::MTKT, T, iters), d.data());
}

}  // namespace

TEST(Entropy, ConstructedValuesRecovered) {
  const std::vector<double> es{0.1, 0.2, 0.3, 0.4};
  const auto got = normalized_entropy(two_class_map(es));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], es[i], 1e-12);
}

TEST(Entropy, UniformIsOneAndOneHotIsZero) {
  Tensor u({7, 2, 2}, 1.0 / 7.0);
  for (double e : normalized_entropy(u)) EXPECT_NEAR(e, 1.0, 1e-15);
  Tensor h({1, 3, 1, 1});
  h.values()[1] = 1.0;
  EXPECT_EQ(normalized_entropy(h)[0], 0.0);
  EXPECT_THROW(normalized_entropy(Tensor({2, 3, 1, 1})), DimensionError);
}

TEST(Extract, KeepsLowestEntropyHalfPerClass) {
  const auto pl = extract_pseudo_labels(two_class_map({0.1, 0.2, 0.3, 0.4}), 0.5, "spec_1");
  EXPECT_EQ(pl.labels.values, (std::vector<std::int32_t>{0, 0, kIgnoreLabel, kIgnoreLabel}));
  EXPECT_EQ(pl.selection_fraction, 0.5);
  EXPECT_EQ(pl.source_head, "spec_1");
  const auto shuffled = extract_pseudo_labels(two_class_map({0.4, 0.1, 0.3, 0.2}), 0.5);
  EXPECT_EQ(shuffled.labels.values, (std::vector<std::int32_t>{kIgnoreLabel, 0, kIgnoreLabel, 0}));
}

TEST(Extract, SelectionIsPerClassAndFloored) {
  Tensor t({2, 1, 5});
  // Pixels 0..2 -> class 0, pixels 3..4 -> class 1; entropies rise with confidence loss.
  const std::vector<double> p0{0.99, 0.9, 0.8, 0.3, 0.1};
  for (std::size_t i = 0; i < 5; ++i) {
    t.values()[i] = p0[i];
    t.values()[5 + i] = 1 - p0[i];
  }
  const auto pl = extract_pseudo_labels(t, 0.5);
  // floor(1.5) = 1 of class 0, floor(1.0) = 1 of class 1.
  EXPECT_EQ(pl.labels.values, (std::vector<std::int32_t>{0, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel, 1}));
  const auto all = extract_pseudo_labels(t, 1.0);
  EXPECT_EQ(all.labels.values, (std::vector<std::int32_t>{0, 0, 0, 1, 1}));
}

TEST(Extract, TiesKeepLowerIndexAndBadKeepRejected) {
  Tensor t({2, 1, 4}, 0.5);
  EXPECT_EQ(extract_pseudo_labels(t, 0.5).labels.values,
            (std::vector<std::int32_t>{0, 0, kIgnoreLabel, kIgnoreLabel}));
  EXPECT_THROW(extract_pseudo_labels(t, 0.0), ContractError);
  EXPECT_THROW(extract_pseudo_labels(t, 1.5), ContractError);
}

TEST(Extract, TinyKeepSelectsNothing) {
  Rng r(5);
  const Tensor p = testutil::random_probs(r, 1, 7, 16, 16);
  const auto pl = extract_pseudo_labels(p, 1e-9);
  for (auto v : pl.labels.values) EXPECT_EQ(v, kIgnoreLabel);
  EXPECT_EQ(pl.selection_fraction, 0.0);
}

TEST(KlMask, ZeroOnlyWhereLabelDisagrees) {
  LabelMap pl(1, 1, 4, 0), st(1, 1, 4, 0);
  pl.values = {2, kIgnoreLabel, 3, 1};
  st.values = {2, 5, 4, 1};
  EXPECT_EQ(kl_agreement_mask(pl, st), (std::vector<double>{1, 1, 0, 1}));
  EXPECT_THROW(kl_agreement_mask(pl, LabelMap(1, 2, 2, 0)), DimensionError);
}

TEST(Strategy, NamesRoundTrip) {
  for (PLStrategy s : {PLStrategy::TeacherOnly, PLStrategy::TeacherPlusKLMask, PLStrategy::TeacherPlusAgnostic}) {
    EXPECT_EQ(parse_pl_strategy(to_string(s)), s);
  }
  EXPECT_THROW(parse_pl_strategy("student"), ConfigError);
}

TEST(Refine, EachVariantTouchesOnlyItsParameters) {
  TinyData d(2, 4);
  const TrainState base = trained_mtkt(d, 2);
  struct Case {
    PLStrategy s;
    std::vector<std::string> allowed;
    std::string required;
  };
  const std::vector<Case> cases{
      {PLStrategy::TeacherOnly, {"seg.feat.", "seg.head.spec_"}, "seg.head.spec_"},
      {PLStrategy::TeacherPlusKLMask, {"seg.feat.", "seg.head.spec_"}, "seg.head.spec_"},
      {PLStrategy::TeacherPlusAgnostic, {"seg.feat.", "seg.head.spec_", "seg.head.agn."}, "seg.head.agn."},
  };
  for (const auto& c : cases) {
    probes::Recorder rec;
    rec.filter = [](const std::string& n) { return probes::starts_with(n, "pl_") || n == "kl"; };
    const TrainState refined = refine_mtkt(base, d.data(), c.s, 3, 0.5, rec.hooks());
    EXPECT_EQ(refined.iteration, base.iteration + 3);
    EXPECT_FALSE(refined.refine.active);
    EXPECT_EQ(refined.history.at("pl_ce").size(), 3u);
    std::set<std::string> pl_touched;
    for (const auto& [key, set] : rec.touched) {
      if (probes::starts_with(key, "seg:pl_")) pl_touched.insert(set.begin(), set.end());
    }
    const std::string name = to_string(c.s);
    EXPECT_TRUE(probes::only_prefixes(pl_touched, c.allowed)) << name;
    EXPECT_TRUE(probes::any_with_prefix(pl_touched, c.required)) << name;
    EXPECT_TRUE(probes::any_with_prefix(pl_touched, "seg.feat.")) << name;
    EXPECT_FALSE(probes::any_with_prefix(rec.touched.at("seg:kl"), "seg.head.spec_")) << name;
    const bool agn_terms = rec.touched.count("seg:pl_agn_1") > 0;
    EXPECT_EQ(agn_terms, c.s == PLStrategy::TeacherPlusAgnostic) << name;
    if (c.s != PLStrategy::TeacherPlusAgnostic) {
      EXPECT_FALSE(probes::any_with_prefix(pl_touched, "seg.head.agn.")) << name;
    }
  }
}

TEST(Refine, MaskVariantChangesTheDistillationTerm) {
  TinyData d(2, 4);
  const TrainState base = trained_mtkt(d, 2);
  const TrainState a = refine_mtkt(base, d.data(), PLStrategy::TeacherOnly, 2, 0.5);
  const TrainState b = refine_mtkt(base, d.data(), PLStrategy::TeacherPlusKLMask, 2, 0.5);
  const auto& ka = a.history.at("kl");
  const auto& kb = b.history.at("kl");
  ASSERT_EQ(ka.size(), kb.size());
  EXPECT_LE(kb.back(), ka.back());
  EXPECT_NE(ka.back(), kb.back());
}

TEST(Refine, VanishingKeepReducesToContinuedTraining) {
  TinyData d(2, 4);
  const TrainState base = trained_mtkt(d, 2);
  TrainState cont = base;
  run_training(cont, d.data(), base.iteration + 10);
  for (PLStrategy s : {PLStrategy::TeacherOnly, PLStrategy::TeacherPlusKLMask, PLStrategy::TeacherPlusAgnostic}) {
    TrainState r = refine_mtkt(base, d.data(), s, 10, 1e-9);
    EXPECT_EQ(testutil::flat_values(r.segmenter), testutil::flat_values(cont.segmenter)) << to_string(s);
    EXPECT_EQ(testutil::flat_values(r.bank.parameters()), testutil::flat_values(cont.bank.parameters()));
    for (double v : r.history.at("pl_ce")) EXPECT_EQ(v, 0.0);
  }
}

TEST(Refine, InputStateUntouchedAndWrongMethodRejected) {
  TinyData d(2, 4);
  TrainState base = trained_mtkt(d, 2);
  const auto before = testutil::flat_values(base.segmenter);
  refine_mtkt(base, d.data(), PLStrategy::TeacherOnly, 2, 0.5);
  EXPECT_EQ(testutil::flat_values(base.segmenter), before);
  const TrainState md = train(tiny_config(Method::MultiDis, 2, 2), d.data());
  EXPECT_THROW(refine_mtkt(md, d.data(), PLStrategy::TeacherOnly, 1, 0.5), ContractError);
  EXPECT_THROW(refine_baseline(md, d.data(), 1, 0.5), ContractError);
}

TEST(Refine, BaselineTrainsMainHeadOnMergedTargets) {
  TinyData d(2, 4);
  const TrainState base = train(tiny_config(Method::MultiTargetBaseline, 2, 4), d.data());
  probes::Recorder rec;
  rec.filter = [](const std::string& n) { return probes::starts_with(n, "pl_"); };
  const TrainState r = refine_baseline(base, d.data(), 3, 0.5, rec.hooks());
  EXPECT_EQ(r.history.at("pl_ce").size(), 3u);
  const auto& t = rec.touched.at("seg:pl_main");
  EXPECT_TRUE(probes::only_prefixes(t, {"seg.feat.", "seg.head.main."}));
  EXPECT_TRUE(probes::any_with_prefix(t, "seg.head.main."));
  TrainState cont = base;
  run_training(cont, d.data(), base.iteration + 3);
  TrainState none = refine_baseline(base, d.data(), 3, 1e-9);
  EXPECT_EQ(testutil::flat_values(none.segmenter), testutil::flat_values(cont.segmenter));
}
