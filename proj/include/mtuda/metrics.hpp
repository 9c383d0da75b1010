#pragma once

// Confusion matrices, IoU and per-domain reports.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtuda/labels.hpp"

namespace mtuda {

struct TrainState;
class DomainDataset;

/// Row = ground truth, column = prediction.
struct ConfusionMatrix {
  std::size_t num_classes = kNumSuperClasses;
  std::vector<std::uint64_t> counts;  // num_classes^2, row-major
  std::uint64_t ignored_pixels = 0;

  explicit ConfusionMatrix(std::size_t classes = kNumSuperClasses)
      : num_classes(classes), counts(classes * classes, 0) {}

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// IGNORE truth pixels only increment ignored_pixels. Throws DimensionError on
/// shape mismatch and ContractError on a label outside [0, C).
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth);

struct IouResult {
  std::vector<double> per_class;  // 0 where absent
  std::vector<bool> present;      // TP + FP + FN > 0
  double miou = 0.0;              // mean over present classes; 0 if none
};

IouResult iou_from_cm(const ConfusionMatrix& cm);

struct DomainResult {
  std::string domain_id;
  IouResult iou;
  std::uint64_t pixels = 0;
};

struct EvalReport {
  std::vector<DomainResult> per_domain;  // in evaluation order
  double miou_avg = 0.0;                 // unweighted mean of per-domain mIoU

  const DomainResult* find(const std::string& domain_id) const;
};

/// Mean over domains; recomputes miou_avg.
void finalize(EvalReport& report);

/// Predicts every scene with the deployment head and scores it against the
/// ground truth. Works on domains absent from training.
EvalReport evaluate(const TrainState& state, const std::vector<const DomainDataset*>& datasets,
                    std::size_t batch_size = 8);

/// Fixed-width table in percent with 1 decimal. With a baseline, each cell
/// carries the signed delta for domains present in both. Absent classes are
/// shown as "-" and excluded from the mean.
std::string render_report(const EvalReport& report, const std::optional<EvalReport>& baseline = std::nullopt);

/// `domain<TAB>class<TAB>iou` lines (fractions, 17 significant digits), with
/// "miou" rows per domain and a final "avg<TAB>miou<TAB>x" row. Absent
/// classes are written as "nan".
std::string machine_report(const EvalReport& report);
/// Inverse of machine_report; lines starting with '#' are skipped.
EvalReport parse_machine_report(const std::string& text);

}  // namespace mtuda
