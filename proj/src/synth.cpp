#include "mtuda/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mtuda/errors.hpp"
#include "mtuda/rng.hpp"

namespace mtuda {

namespace {

enum Cls : std::int32_t { kFlat = 0, kConstruction, kObject, kNature, kSky, kHuman, kVehicle };

constexpr std::array<Rgb, kNumSuperClasses> kSaturated = {{
    {0.50, 0.25, 0.50},  // flat
    {0.55, 0.45, 0.35},  // construction
    {0.95, 0.75, 0.10},  // object
    {0.20, 0.55, 0.15},  // nature
    {0.30, 0.55, 0.90},  // sky
    {0.90, 0.10, 0.25},  // human
    {0.05, 0.10, 0.55},  // vehicle
}};

std::array<Rgb, kNumSuperClasses> toward_gray(const std::array<Rgb, kNumSuperClasses>& p, double amount) {
  auto out = p;
  for (auto& c : out) {
    for (double& v : c) v = v + (0.5 - v) * amount;
  }
  return out;
}

struct Layout {
  LabelMap labels;
  std::vector<std::int32_t> instance;
  std::int32_t instances = 0;
};

class Painter {
 public:
  Painter(std::size_t h, std::size_t w, std::int32_t bg) : h_(h), w_(w) {
    layout_.labels = LabelMap(h, w, bg);
    layout_.instance.assign(h * w, 0);
    layout_.instances = 1;
    counts_.fill(0);
    counts_[bg] = static_cast<long>(h * w);
  }

  std::int32_t new_instance() { return layout_.instances++; }

  void paint(long y, long x, std::int32_t cls, std::int32_t inst) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h_) || x >= static_cast<long>(w_)) return;
    const std::size_t i = static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x);
    --counts_[layout_.labels.values[i]];
    ++counts_[cls];
    layout_.labels.values[i] = cls;
    layout_.instance[i] = inst;
  }

  void box(long y0, long x0, long y1, long x1, std::int32_t cls) {
    const std::int32_t inst = new_instance();
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) paint(y, x, cls, inst);
  }

  long count(std::int32_t cls) const { return counts_[cls]; }
  Layout take() { return std::move(layout_); }

 private:
  std::size_t h_, w_;
  Layout layout_;
  std::array<long, kNumSuperClasses> counts_{};
};

long scaled(std::size_t dim, double frac) { return std::max(1L, std::lround(static_cast<double>(dim) * frac)); }

long rand_between(Rng& rng, long lo, long hi) {
  if (hi <= lo) return lo;
  return lo + static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
}

Layout make_layout(const std::array<double, kNumSuperClasses>& bias, std::uint64_t seed, std::size_t h, std::size_t w) {
  const double total = std::accumulate(bias.begin(), bias.end(), 0.0);
  if (!(total > 0.0)) throw ConfigError("class_frequency_bias is all zero");
  std::array<double, kNumSuperClasses> f{};
  for (int c = 0; c < kNumSuperClasses; ++c) f[c] = bias[c] / total;

  Rng rng(derive_seed(seed, "layout"));
  auto jitter = [&]() { return rng.uniform(0.75, 1.25); };
  const double area = static_cast<double>(h * w);

  // Background: the most frequent filler class, else flat, else sky.
  std::int32_t bg = -1;
  for (std::int32_t c : {kConstruction, kNature, kObject}) {
    if (f[c] > 0.0 && (bg < 0 || f[c] > f[bg])) bg = c;
  }
  if (bg < 0) bg = f[kFlat] > 0.0 ? kFlat : kSky;
  Painter p(h, w, bg);
  const long H = static_cast<long>(h), W = static_cast<long>(w);

  // Sky band with a piecewise-constant skyline.
  long sky_rows = 0;
  if (bg != kSky && f[kSky] > 0.0) {
    sky_rows = std::clamp(std::lround(f[kSky] * H * jitter()), 1L, H / 2);
    const std::int32_t inst = p.new_instance();
    long x = 0;
    while (x < W) {
      const long seg = rand_between(rng, scaled(w, 1.0 / 16), scaled(w, 3.0 / 16));
      const long off = rand_between(rng, -scaled(h, 1.0 / 16), scaled(h, 1.0 / 16));
      const long rows = std::clamp(sky_rows + off, 0L, H / 2);
      for (long xx = x; xx < std::min(W, x + seg); ++xx)
        for (long y = 0; y < rows; ++y) p.paint(y, xx, kSky, inst);
      x += seg;
    }
  }

  // Flat band below the horizon.
  long horizon = H;
  if (bg != kFlat && f[kFlat] > 0.0) {
    // Vehicles and humans stand on the band and cover part of it.
    const double share = f[kFlat] + f[kVehicle] + 0.7 * f[kHuman];
    const long rows = std::clamp(std::lround(share * H * jitter()), 1L, H - sky_rows - 1);
    horizon = H - rows;
    const std::int32_t inst = p.new_instance();
    for (long y = horizon; y < H; ++y)
      for (long x = 0; x < W; ++x) p.paint(y, x, kFlat, inst);
  }
  const long top = std::min(sky_rows, horizon - 1);
  const long ground = std::max(horizon, top + 1);

  constexpr int kMaxShapes = 400;

  if (bg != kNature && f[kNature] > 0.0) {
    const double target = f[kNature] * area * jitter();
    for (int k = 0; k < kMaxShapes && p.count(kNature) < target; ++k) {
      const long cy = rand_between(rng, std::max(0L, top - scaled(h, 1.0 / 16)), ground - 1);
      const long cx = rand_between(rng, 0, W - 1);
      const double ry = static_cast<double>(rand_between(rng, scaled(h, 1.0 / 20), scaled(h, 1.0 / 7)));
      const double rx = static_cast<double>(rand_between(rng, scaled(w, 1.0 / 20), scaled(w, 1.0 / 6)));
      const std::int32_t inst = p.new_instance();
      for (long y = cy - static_cast<long>(ry); y <= cy + static_cast<long>(ry); ++y)
        for (long x = cx - static_cast<long>(rx); x <= cx + static_cast<long>(rx); ++x) {
          if (y < 0 || y >= ground || x < 0 || x >= W) continue;
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          if (dy * dy + dx * dx <= 1.0) p.paint(y, x, kNature, inst);
        }
    }
  }

  if (bg != kObject && f[kObject] > 0.0) {
    const double target = f[kObject] * area * jitter();
    for (int k = 0; k < kMaxShapes && p.count(kObject) < target; ++k) {
      const long x = rand_between(rng, 0, W - 1);
      const long pw = rand_between(rng, 1, std::max(1L, scaled(w, 1.0 / 32)));
      const long y0 = rand_between(rng, std::max(1L, top / 2), std::max(1L, ground - scaled(h, 1.0 / 6)));
      const long y1 = std::min(H, ground + rand_between(rng, 0, scaled(h, 1.0 / 32)));
      p.box(y0, x, y1, x + pw, kObject);
      if (rng.uniform() < 0.5) {
        const long sw = rand_between(rng, 2, scaled(w, 1.0 / 12));
        const long sh = rand_between(rng, 2, scaled(h, 1.0 / 14));
        p.box(y0, x - sw / 2, y0 + sh, x - sw / 2 + sw, kObject);
      }
    }
  }

  if (f[kHuman] > 0.0 && bg != kHuman) {
    const double target = f[kHuman] * area * jitter();
    for (int k = 0; k < kMaxShapes && p.count(kHuman) < target; ++k) {
      const long bw = rand_between(rng, std::max(2L, scaled(w, 1.0 / 32)), std::max(2L, scaled(w, 1.0 / 14)));
      const long bh = rand_between(rng, scaled(h, 1.0 / 10), scaled(h, 1.0 / 5));
      const long bottom = rand_between(rng, std::min(H, ground + 1), std::min(H, ground + (H - ground) / 2 + 1));
      const long x = rand_between(rng, 0, W - bw);
      p.box(bottom - bh, x, bottom, x + bw, kHuman);
    }
  }

  if (f[kVehicle] > 0.0 && bg != kVehicle) {
    const double target = f[kVehicle] * area * jitter();
    for (int k = 0; k < kMaxShapes && p.count(kVehicle) < target; ++k) {
      const long bw = rand_between(rng, scaled(w, 1.0 / 8), scaled(w, 1.0 / 4));
      const long bh = rand_between(rng, scaled(h, 1.0 / 12), scaled(h, 1.0 / 6));
      const long bottom = rand_between(rng, std::min(H, ground + 2), H);
      const long x = rand_between(rng, -bw / 2, W - bw / 2);
      p.box(bottom - bh, x, bottom, x + bw, kVehicle);
    }
  }
  return p.take();
}

}  // namespace

void DomainSpec::validate() const {
  if (!(brightness > 0.0)) throw ConfigError("domain '" + domain_id + "': brightness must be > 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("domain '" + domain_id + "': noise_sigma must be >= 0");
  if (texture_grain < 1) throw ConfigError("domain '" + domain_id + "': texture_grain must be >= 1");
  int nonzero = 0;
  for (double b : class_frequency_bias) {
    if (!(b >= 0.0)) throw ConfigError("domain '" + domain_id + "': class_frequency_bias must be >= 0");
    nonzero += b > 0.0;
  }
  if (nonzero < 3) throw ConfigError("domain '" + domain_id + "': class_frequency_bias needs >= 3 nonzero entries");
  for (const auto& c : palette) {
    for (double v : c) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("domain '" + domain_id + "': palette values must be in [0, 1]");
    }
  }
}

DomainSpec preset(const std::string& name) {
  DomainSpec s;
  s.domain_id = name;
  if (name == "synth") {
    s.palette = kSaturated;
    s.noise_sigma = 0.06;
    s.texture_grain = 2;
    s.class_frequency_bias = {0.30, 0.22, 0.06, 0.16, 0.14, 0.03, 0.09};
  } else if (name == "euro") {
    s.palette = toward_gray(kSaturated, 0.35);
    s.hue_shift = 25.0;
    s.brightness = 0.8;
    s.noise_sigma = 0.04;
    s.texture_grain = 3;
    s.class_frequency_bias = {0.34, 0.24, 0.05, 0.15, 0.10, 0.03, 0.09};
  } else if (name == "india") {
    s.palette = kSaturated;
    s.hue_shift = -30.0;
    s.brightness = 1.15;
    s.noise_sigma = 0.08;
    s.texture_grain = 2;
    s.class_frequency_bias = {0.30, 0.14, 0.10, 0.14, 0.10, 0.08, 0.14};
  } else if (name == "world") {
    s.palette = toward_gray(kSaturated, 0.15);
    s.hue_shift = 60.0;
    s.brightness = 0.95;
    s.noise_sigma = 0.12;
    s.texture_grain = 4;
    s.class_frequency_bias = {0.28, 0.20, 0.07, 0.17, 0.15, 0.04, 0.09};
  } else {
    throw ConfigError("unknown domain preset '" + name + "' (synth | euro | india | world)");
  }
  return s;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"synth", "euro", "india", "world"};
  return names;
}

Rgb rotate_hue(const Rgb& c, double degrees) {
  const double th = degrees * std::numbers::pi / 180.0;
  const double k = 1.0 / std::sqrt(3.0);
  const double cs = std::cos(th), sn = std::sin(th);
  const double dot = k * (c[0] + c[1] + c[2]);
  // Rodrigues rotation about (1,1,1)/sqrt(3).
  const Rgb cross = {k * (c[2] - c[1]), k * (c[0] - c[2]), k * (c[1] - c[0])};
  Rgb out{};
  for (int i = 0; i < 3; ++i) out[i] = c[i] * cs + cross[i] * sn + k * dot * (1.0 - cs);
  return out;
}

LabelMap generate_layout(const std::array<double, kNumSuperClasses>& bias, std::uint64_t seed, std::size_t h,
                         std::size_t w) {
  return make_layout(bias, seed, h, w).labels;
}

Scene generate_scene(const DomainSpec& spec, std::uint64_t seed, std::size_t h, std::size_t w) {
  spec.validate();
  if (h < 32 || w < 32) throw ConfigError("scene size must be at least 32x32");
  Layout layout = make_layout(spec.class_frequency_bias, seed, h, w);

  Rng rng(derive_seed(seed, "appearance"));
  const double sigma = spec.noise_sigma;
  std::array<Rgb, kNumSuperClasses> base{};
  for (int c = 0; c < kNumSuperClasses; ++c) {
    base[c] = rotate_hue(spec.palette[c], spec.hue_shift);
    for (double& v : base[c]) v *= spec.brightness;
  }
  std::vector<double> shade(static_cast<std::size_t>(layout.instances), 1.0);
  std::size_t gh = 0, gw = 0;
  std::vector<double> grain;
  if (sigma > 0.0) {
    for (double& s : shade) s = std::clamp(1.0 + sigma * rng.normal(), 0.5, 1.5);
    const auto g = static_cast<std::size_t>(spec.texture_grain);
    gh = (h + g - 1) / g;
    gw = (w + g - 1) / g;
    grain.resize(3 * gh * gw);
    for (double& v : grain) v = 0.5 * sigma * rng.normal();
  }

  Scene scene;
  scene.domain_id = spec.domain_id;
  scene.image = Tensor({3, h, w});
  auto img = scene.image.values();
  const auto g = static_cast<std::size_t>(spec.texture_grain);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        double v = base[layout.labels.values[i]][ch];
        if (sigma > 0.0) {
          v = v * shade[layout.instance[i]] + sigma * rng.normal() + grain[(ch * gh + y / g) * gw + x / g];
        }
        img[ch * h * w + i] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  scene.labels = std::move(layout.labels);
  return scene;
}

DomainDataset::DomainDataset(std::string domain_id, bool labeled, std::vector<Scene> scenes)
    : domain_id_(std::move(domain_id)), labeled_(labeled), scenes_(std::move(scenes)) {}

const LabelMap& DomainDataset::labels(std::size_t i) const {
  if (!labeled_) throw ContractError("dataset '" + domain_id_ + "' is unlabeled; labels are not available for training");
  return scenes_.at(i).labels;
}

Tensor DomainDataset::batch_images(const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw ContractError("batch_images: empty batch");
  const Shape& s = image(idx[0]).shape();
  const std::size_t per = image(idx[0]).numel();
  std::vector<double> out;
  out.reserve(per * idx.size());
  for (std::size_t i : idx) {
    const Tensor& im = image(i);
    if (im.shape() != s) throw DimensionError("batch_images: scenes differ in size");
    out.insert(out.end(), im.values().begin(), im.values().end());
  }
  return Tensor({idx.size(), s[0], s[1], s[2]}, std::move(out));
}

LabelMap DomainDataset::batch_labels(const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw ContractError("batch_labels: empty batch");
  const LabelMap& first = labels(idx[0]);
  LabelMap out(idx.size(), first.h, first.w, 0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const LabelMap& l = labels(idx[k]);
    if (l.h != first.h || l.w != first.w) throw DimensionError("batch_labels: scenes differ in size");
    std::copy(l.values.begin(), l.values.end(), out.values.begin() + k * first.h * first.w);
  }
  return out;
}

DomainDataset DomainDataset::subset(const std::vector<std::size_t>& idx) const {
  std::vector<Scene> picked;
  picked.reserve(idx.size());
  for (std::size_t i : idx) picked.push_back(scenes_.at(i));
  return DomainDataset(domain_id_, labeled_, std::move(picked));
}

DomainDataset DomainDataset::as_labeled(bool labeled) const { return DomainDataset(domain_id_, labeled, scenes_); }

DomainDataset generate_dataset(const DomainSpec& spec, std::size_t n, std::uint64_t seed, std::size_t h,
                               std::size_t w, bool labeled, std::size_t first_index) {
  if (n == 0) throw ConfigError("generate_dataset: n must be >= 1");
  spec.validate();
  std::vector<Scene> scenes;
  scenes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) scenes.push_back(generate_scene(spec, derive_seed(seed, first_index + i), h, w));
  return DomainDataset(spec.domain_id, labeled, std::move(scenes));
}

DomainDataset merge_datasets(const std::vector<const DomainDataset*>& datasets) {
  if (datasets.empty()) throw ContractError("merge_datasets: nothing to merge");
  const bool labeled = datasets[0]->labeled();
  std::string id;
  std::size_t longest = 0;
  for (const DomainDataset* d : datasets) {
    if (d->labeled() != labeled) throw ContractError("merge_datasets: cannot mix labeled and unlabeled datasets");
    id += (id.empty() ? "" : "+") + d->domain_id();
    longest = std::max(longest, d->size());
  }
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < longest; ++i) {
    for (const DomainDataset* d : datasets) {
      if (i < d->size()) scenes.push_back(d->scenes()[i]);
    }
  }
  return DomainDataset(id, labeled, std::move(scenes));
}

SplitIndices split_indices(std::size_t n, std::size_t val_count, std::uint64_t seed) {
  if (val_count > n) throw ConfigError("split_indices: val_count exceeds n");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  SplitIndices s;
  s.train.assign(perm.begin(), perm.end() - static_cast<long>(val_count));
  s.val.assign(perm.end() - static_cast<long>(val_count), perm.end());
  return s;
}

}  // namespace mtuda
