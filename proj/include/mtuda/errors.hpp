#pragma once

#include <stdexcept>
#include <string>

namespace mtuda {

/// Tensor shapes that do not fit together (channel counts, ranks, sizes).
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an API precondition (non-scalar loss, wrong dataset kind, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid architecture, experiment or domain configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN or Inf appeared in a tensor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or mismatching file on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mtuda
