#include "mtuda/taxonomy.hpp"

#include <array>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "mtuda/errors.hpp"

namespace mtuda {

namespace fs = std::filesystem;

int super_class_index(const std::string& name) {
  for (int c = 0; c < kNumSuperClasses; ++c) {
    if (kSuperClassNames[c] == name) return c;
  }
  return -1;
}

const ClassEntry& ClassMapping::find(int orig_id) const {
  for (const auto& e : entries) {
    if (e.orig_id == orig_id) return e;
  }
  throw FormatError(dataset_name + ": unknown class id " + std::to_string(orig_id));
}

std::int32_t ClassMapping::target(int orig_id) const {
  const ClassEntry& e = find(orig_id);
  return e.used ? super_class_index(e.super_class) : kIgnoreLabel;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

[[noreturn]] void row_error(const std::string& ds, int line, const std::string& msg) {
  throw FormatError(ds + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

ClassMapping load_mapping(const std::string& text, const std::string& dataset_name) {
  ClassMapping m;
  m.dataset_name = dataset_name;
  std::set<int> seen;
  std::array<bool, kNumSuperClasses> hit{};
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 4) row_error(dataset_name, lineno, "expected 4 tab-separated columns");
    ClassEntry e;
    char* end = nullptr;
    const long id = std::strtol(cols[0].c_str(), &end, 10);
    if (cols[0].empty() || *end != '\0') row_error(dataset_name, lineno, "bad class id '" + cols[0] + "'");
    e.orig_id = static_cast<int>(id);
    e.name = cols[1];
    if (cols[2] != "0" && cols[2] != "1") row_error(dataset_name, lineno, "used must be 0 or 1");
    e.used = cols[2] == "1";
    e.super_class = cols[3];
    const int sc = super_class_index(e.super_class);
    if (sc < 0 && e.super_class != "void" && e.super_class != "other") {
      row_error(dataset_name, lineno, "unknown super class '" + e.super_class + "'");
    }
    if (e.used && sc < 0) row_error(dataset_name, lineno, "used class '" + e.name + "' maps to " + e.super_class);
    if (!seen.insert(e.orig_id).second) row_error(dataset_name, lineno, "duplicate class id " + cols[0]);
    if (e.used) hit[sc] = true;
    m.entries.push_back(std::move(e));
  }
  for (int c = 0; c < kNumSuperClasses; ++c) {
    if (!hit[c]) {
      throw FormatError(dataset_name + ": super class '" + std::string(kSuperClassNames[c]) + "' has no used row");
    }
  }
  return m;
}

ClassMapping load_mapping_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return load_mapping(ss.str(), path.stem().string());
}

std::string serialize_mapping(const ClassMapping& m) {
  std::ostringstream os;
  os << "# orig_id\tname\tused\tsuper_class\n";
  for (const auto& e : m.entries) os << e.orig_id << '\t' << e.name << '\t' << (e.used ? 1 : 0) << '\t' << e.super_class << '\n';
  return os.str();
}

fs::path data_dir() {
  if (const char* env = std::getenv("MTUDA_DATA_DIR")) return env;
#ifdef MTUDA_DATA_DIR
  return MTUDA_DATA_DIR;
#else
  return "data";
#endif
}

const std::vector<std::string>& shipped_mapping_names() {
  static const std::vector<std::string> names{"cityscapes", "gta5", "mapillary", "idd"};
  return names;
}

ClassMapping shipped_mapping(const std::string& dataset_name) {
  bool known = false;
  for (const auto& n : shipped_mapping_names()) known = known || n == dataset_name;
  if (!known) throw ConfigError("no shipped mapping for '" + dataset_name + "'");
  return load_mapping_file(data_dir() / "taxonomy" / (dataset_name + ".tsv"));
}

LabelMap remap_labels(const ClassMapping& mapping, const LabelMap& labels) {
  std::map<int, std::int32_t> table;
  for (const auto& e : mapping.entries) table[e.orig_id] = mapping.target(e.orig_id);
  LabelMap out = labels;
  for (auto& v : out.values) {
    auto it = table.find(v);
    if (it == table.end()) throw FormatError(mapping.dataset_name + ": unknown class id " + std::to_string(v));
    v = it->second;
  }
  return out;
}

}  // namespace mtuda
