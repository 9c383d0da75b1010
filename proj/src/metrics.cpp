#include "mtuda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mtuda/errors.hpp"
#include "mtuda/synth.hpp"
#include "mtuda/taxonomy.hpp"
#include "mtuda/trainers.hpp"

namespace mtuda {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts) t += c;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw DimensionError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  ignored_pixels += other.ignored_pixels;
  return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w) {
    throw DimensionError("prediction and ground truth differ in shape");
  }
  const auto C = static_cast<std::int32_t>(cm.num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::int32_t t = truth.values[i];
    if (t == kIgnoreLabel) {
      ++cm.ignored_pixels;
      continue;
    }
    const std::int32_t p = pred.values[i];
    if (t < 0 || t >= C || p < 0 || p >= C) throw ContractError("label outside [0, " + std::to_string(C) + ")");
    ++cm.counts[static_cast<std::size_t>(t) * cm.num_classes + static_cast<std::size_t>(p)];
  }
}

IouResult iou_from_cm(const ConfusionMatrix& cm) {
  const std::size_t C = cm.num_classes;
  IouResult r;
  r.per_class.assign(C, 0.0);
  r.present.assign(C, false);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (std::size_t k = 0; k < C; ++k) {
      if (k == c) continue;
      fp += cm.at(k, c);
      fn += cm.at(c, k);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.present[c] = true;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.per_class[c];
    ++n;
  }
  r.miou = n ? sum / static_cast<double>(n) : 0.0;
  return r;
}

const DomainResult* EvalReport::find(const std::string& domain_id) const {
  for (const auto& d : per_domain) {
    if (d.domain_id == domain_id) return &d;
  }
  return nullptr;
}

void finalize(EvalReport& report) {
  double s = 0.0;
  for (const auto& d : report.per_domain) s += d.iou.miou;
  report.miou_avg = report.per_domain.empty() ? 0.0 : s / static_cast<double>(report.per_domain.size());
}

EvalReport evaluate(const TrainState& state, const std::vector<const DomainDataset*>& datasets,
                    std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("evaluation batch size must be >= 1");
  EvalReport report;
  for (const DomainDataset* ds : datasets) {
    ConfusionMatrix cm(state.cfg.num_classes);
    for (std::size_t begin = 0; begin < ds->size(); begin += batch_size) {
      std::vector<std::size_t> idx;
      for (std::size_t i = begin; i < std::min(ds->size(), begin + batch_size); ++i) idx.push_back(i);
      const LabelMap pred = predict(state, ds->batch_images(idx));
      const std::size_t hw = pred.h * pred.w;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        LabelMap one(pred.h, pred.w);
        std::copy(pred.values.begin() + k * hw, pred.values.begin() + (k + 1) * hw, one.values.begin());
        accumulate(cm, one, ds->ground_truth(idx[k]));
      }
    }
    report.per_domain.push_back({ds->domain_id(), iou_from_cm(cm), cm.total() + cm.ignored_pixels});
  }
  finalize(report);
  return report;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

std::string signed_pct(double v) {
  char buf[32];
  const double r = std::round(1000.0 * v) / 10.0;
  std::snprintf(buf, sizeof buf, "%+.1f", r == 0.0 ? 0.0 : r);
  return buf;
}

std::string cell(double v, bool present, const std::optional<double>& base) {
  if (!present) return "-";
  std::string s = pct(v);
  if (base) s += " (" + signed_pct(v - *base) + ")";
  return s;
}

std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

}  // namespace

std::string render_report(const EvalReport& report, const std::optional<EvalReport>& baseline) {
  const std::size_t C = report.per_domain.empty() ? kNumSuperClasses : report.per_domain.front().iou.per_class.size();
  const std::size_t cw = baseline ? 14 : 8;
  std::size_t dw = 10;
  for (const auto& d : report.per_domain) dw = std::max(dw, d.domain_id.size() + 1);

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(dw)) << "domain" << std::right;
  for (std::size_t c = 0; c < C; ++c) {
    os << pad(c < kNumSuperClasses ? std::string(kSuperClassShortNames[c]) : "c" + std::to_string(c), cw);
  }
  os << pad("mIoU", cw) << '\n';

  std::vector<std::string> absent;
  for (const auto& d : report.per_domain) {
    const DomainResult* b = baseline ? baseline->find(d.domain_id) : nullptr;
    os << std::left << std::setw(static_cast<int>(dw)) << d.domain_id << std::right;
    for (std::size_t c = 0; c < C; ++c) {
      std::optional<double> base;
      if (b && b->iou.present.at(c)) base = b->iou.per_class[c];
      os << pad(cell(d.iou.per_class[c], d.iou.present[c], base), cw);
      if (!d.iou.present[c]) absent.push_back(d.domain_id + "/" + std::string(kSuperClassNames[c]));
    }
    std::optional<double> base;
    if (b) base = b->iou.miou;
    os << pad(cell(d.iou.miou, true, base), cw) << '\n';
  }
  std::optional<double> base_avg;
  if (baseline) base_avg = baseline->miou_avg;
  os << std::left << std::setw(static_cast<int>(dw)) << "mIoU Avg." << std::right << pad("", cw * C)
     << pad(cell(report.miou_avg, true, base_avg), cw) << '\n';
  if (!absent.empty()) {
    os << "absent classes (excluded from mIoU):";
    for (const auto& a : absent) os << ' ' << a;
    os << '\n';
  }
  return os.str();
}

std::string machine_report(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& d : report.per_domain) {
    for (std::size_t c = 0; c < d.iou.per_class.size(); ++c) {
      os << d.domain_id << '\t' << (c < kNumSuperClasses ? std::string(kSuperClassNames[c]) : std::to_string(c)) << '\t';
      if (d.iou.present[c]) {
        os << d.iou.per_class[c];
      } else {
        os << "nan";
      }
      os << '\n';
    }
    os << d.domain_id << "\tmiou\t" << d.iou.miou << '\n';
  }
  os << "avg\tmiou\t" << report.miou_avg << '\n';
  return os.str();
}

EvalReport parse_machine_report(const std::string& text) {
  EvalReport r;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_avg = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string domain, cls, value;
    if (!std::getline(ls, domain, '\t') || !std::getline(ls, cls, '\t') || !std::getline(ls, value)) {
      throw FormatError("report line " + std::to_string(lineno) + ": expected domain<TAB>class<TAB>iou");
    }
    double v = 0.0;
    const bool absent = value == "nan";
    if (!absent) {
      try {
        std::size_t used = 0;
        v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw FormatError("report line " + std::to_string(lineno) + ": bad value '" + value + "'");
      }
    }
    if (domain == "avg" && cls == "miou") {
      r.miou_avg = v;
      have_avg = true;
      continue;
    }
    if (r.per_domain.empty() || r.per_domain.back().domain_id != domain) {
      DomainResult d;
      d.domain_id = domain;
      r.per_domain.push_back(d);
    }
    IouResult& iou = r.per_domain.back().iou;
    if (cls == "miou") {
      iou.miou = v;
      continue;
    }
    const int c = super_class_index(cls);
    if (c < 0 || static_cast<std::size_t>(c) != iou.per_class.size()) {
      throw FormatError("report line " + std::to_string(lineno) + ": unexpected class '" + cls + "'");
    }
    iou.per_class.push_back(absent ? 0.0 : v);
    iou.present.push_back(!absent);
  }
  if (!have_avg) throw FormatError("report has no avg row");
  return r;
}

}  // namespace mtuda
