#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mtuda {

inline constexpr int kNumSuperClasses = 7;

/// Label value excluded from losses and from IoU.
inline constexpr std::int32_t kIgnoreLabel = 255;

/// Fixed super-class order shared by the generator, the taxonomy tables and reports.
inline constexpr std::array<std::string_view, kNumSuperClasses> kSuperClassNames = {
    "flat", "construction", "object", "nature", "sky", "human", "vehicle"};

/// Abbreviated column headers used by report tables.
inline constexpr std::array<std::string_view, kNumSuperClasses> kSuperClassShortNames = {
    "flat", "constr.", "object", "nature", "sky", "human", "vehicle"};

/// Integer label grid of shape [n, h, w], row-major.
struct LabelMap {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(std::size_t h_, std::size_t w_, std::int32_t fill = 0)
      : n(1), h(h_), w(w_), values(h_ * w_, fill) {}
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::int32_t fill)
      : n(n_), h(h_), w(w_), values(n_ * h_ * w_, fill) {}

  std::size_t size() const { return values.size(); }
  std::int32_t& at(std::size_t b, std::size_t y, std::size_t x) { return values[(b * h + y) * w + x]; }
  std::int32_t at(std::size_t b, std::size_t y, std::size_t x) const { return values[(b * h + y) * w + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

}  // namespace mtuda
