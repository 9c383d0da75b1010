#pragma once

// Library losses against the brute-force oracles on random small instances.

#include <cmath>
#include <string>
#include <vector>

#include "mtuda/losses.hpp"
#include "mtuda/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace lossoracle {

using namespace mtuda;

struct Result {
  std::string name;
  std::size_t instances = 0;
  double worst_abs = 0.0;
};

struct Summary {
  std::vector<Result> results;
  bool kl_nonnegative = true;
  bool kl_self_zero = true;
};

inline Summary run_all(std::size_t instances = 100, std::uint64_t seed = 77) {
  Rng r(seed);
  Summary s;
  auto shape = [&r] {
    return std::array<std::size_t, 4>{1 + r.uniform_int(2), 2 + r.uniform_int(6), 1 + r.uniform_int(6),
                                      1 + r.uniform_int(6)};
  };

  Result seg{"seg_loss"}, bce{"bce_logits"}, kl{"kl_distill_loss"}, si{"self_information_map"}, iou{"iou_from_cm"};
  for (std::size_t i = 0; i < instances; ++i) {
    Graph g = Graph::no_grad();
    {
      const auto d = shape();
      const Tensor p = testutil::random_probs(r, d[0], d[1], d[2], d[3], r.uniform(0.5, 6.0));
      const LabelMap lab = testutil::random_labels(r, d[0], d[2], d[3], static_cast<int>(d[1]), 0.3);
      seg.worst_abs = std::max(seg.worst_abs, std::abs(seg_loss(g, p, lab).item() - oracle::cross_entropy(p, lab)));
      ++seg.instances;
    }
    {
      const auto d = shape();
      const Tensor logits = testutil::random_tensor(r, {d[0], 1, d[2], d[3]}, -30.0, 30.0);
      const int label = static_cast<int>(r.uniform_int(2));
      double ref = 0.0;
      for (double v : logits.values()) ref += oracle::bce(v, label);
      ref /= static_cast<double>(logits.numel());
      bce.worst_abs = std::max(bce.worst_abs, std::abs(bce_logits(g, logits, label).item() - ref));
      ++bce.instances;
    }
    {
      const auto d = shape();
      const Tensor t = testutil::random_probs(r, d[0], d[1], d[2], d[3], r.uniform(0.5, 6.0));
      const Tensor st = testutil::random_probs(r, d[0], d[1], d[2], d[3], r.uniform(0.5, 6.0));
      const double v = kl_distill_loss(g, t, st).item();
      kl.worst_abs = std::max(kl.worst_abs, std::abs(v - oracle::kl(t, st)));
      if (v < 0.0) s.kl_nonnegative = false;
      if (kl_distill_loss(g, t, t).item() != 0.0) s.kl_self_zero = false;
      ++kl.instances;
    }
    {
      const auto d = shape();
      Tensor p = testutil::random_probs(r, d[0], d[1], d[2], d[3], r.uniform(0.5, 6.0));
      p.values()[0] = 0.0;  // exercises the 0 log 0 convention
      const Tensor m = self_information_map(g, p);
      for (std::size_t k = 0; k < p.numel(); ++k) {
        si.worst_abs = std::max(si.worst_abs, std::abs(m.values()[k] - oracle::self_info(p.values()[k])));
      }
      ++si.instances;
    }
    {
      const int C = 2 + static_cast<int>(r.uniform_int(6));
      const std::size_t h = 1 + r.uniform_int(8), w = 1 + r.uniform_int(8);
      LabelMap pred = testutil::random_labels(r, 1, h, w, C, 0.0);
      LabelMap truth = testutil::random_labels(r, 1, h, w, C, 0.15);
      ConfusionMatrix cm(static_cast<std::size_t>(C));
      accumulate(cm, pred, truth);
      const IouResult res = iou_from_cm(cm);
      const std::vector<int> pv(pred.values.begin(), pred.values.end()), tv(truth.values.begin(), truth.values.end());
      const std::vector<double> ref = oracle::iou_by_sets(pv, tv, C);
      double worst = 0.0;
      for (int c = 0; c < C; ++c) {
        if (std::isnan(ref[c]) != !res.present[c]) worst = 1.0;
        if (!std::isnan(ref[c])) worst = std::max(worst, std::abs(ref[c] - res.per_class[c]));
      }
      iou.worst_abs = std::max(iou.worst_abs, worst);
      ++iou.instances;
    }
  }
  s.results = {seg, bce, kl, si, iou};
  return s;
}

}  // namespace lossoracle
