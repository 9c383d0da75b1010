#pragma once

// Original dataset class ids -> the 7 shared super classes.
//
// Table text: one `orig_id<TAB>name<TAB>used(0|1)<TAB>super_class` row per
// line; blank lines and lines starting with '#' are skipped. super_class is
// one of the 7 super-class names, "void" or "other".

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mtuda/labels.hpp"

namespace mtuda {

struct ClassEntry {
  int orig_id = 0;
  std::string name;
  bool used = false;
  std::string super_class;

  friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

struct ClassMapping {
  std::string dataset_name;
  std::vector<ClassEntry> entries;

  const ClassEntry& find(int orig_id) const;
  /// Super-class index for a used entry, IGNORE otherwise.
  std::int32_t target(int orig_id) const;
  friend bool operator==(const ClassMapping&, const ClassMapping&) = default;
};

/// Parses and validates. Errors (FormatError) carry 1-based line numbers:
/// malformed rows, duplicate ids, unknown super classes, used rows mapped to
/// void/other, and super classes never hit by a used row.
ClassMapping load_mapping(const std::string& text, const std::string& dataset_name);
ClassMapping load_mapping_file(const std::filesystem::path& path);
std::string serialize_mapping(const ClassMapping& m);

/// Shipped tables: "cityscapes", "gta5", "mapillary", "idd".
ClassMapping shipped_mapping(const std::string& dataset_name);
const std::vector<std::string>& shipped_mapping_names();
std::filesystem::path data_dir();

/// Used ids -> super-class index, unused/void/other -> IGNORE. Throws
/// FormatError naming the first unknown id.
LabelMap remap_labels(const ClassMapping& mapping, const LabelMap& labels);

/// Index in the fixed super-class order, or -1.
int super_class_index(const std::string& name);

}  // namespace mtuda
