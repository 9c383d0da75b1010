#include "mtuda/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mtuda/errors.hpp"
#include "mtuda/rng.hpp"

namespace mtuda {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_same_v<T, double>) {
      s += fmt_double(xs[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      s += xs[i];
    } else {
      s += std::to_string(xs[i]);
    }
  }
  return s;
}

// One `key = value` line with its location, for diagnostics.
struct Entry {
  std::string value;
  std::size_t line;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("line " + std::to_string(line) + ": " + msg);
  }

  double as_double() const {
    double v = 0.0;
    const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size()) fail("expected a number, got '" + value + "'");
    return v;
  }

  std::uint64_t as_uint() const {
    std::uint64_t v = 0;
    const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size()) {
      fail("expected a non-negative integer, got '" + value + "'");
    }
    return v;
  }

  std::size_t as_size() const { return static_cast<std::size_t>(as_uint()); }

  int as_int() const {
    int v = 0;
    const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size()) fail("expected an integer, got '" + value + "'");
    return v;
  }

  bool as_bool() const {
    if (value == "true") return true;
    if (value == "false") return false;
    fail("expected true or false, got '" + value + "'");
  }

  std::vector<double> as_doubles() const {
    std::vector<double> out;
    for (const auto& item : split_list(value)) out.push_back(Entry{item, line}.as_double());
    return out;
  }

  std::vector<std::size_t> as_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(value)) out.push_back(Entry{item, line}.as_size());
    return out;
  }

  std::vector<int> as_ints() const {
    std::vector<int> out;
    for (const auto& item : split_list(value)) out.push_back(Entry{item, line}.as_int());
    return out;
  }

  template <class F>
  auto convert(F f) const {
    try {
      return f(value);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
};

using Section = std::map<std::string, Entry>;

void apply_train(const Section& s, TrainConfig& t) {
  for (const auto& [key, e] : s) {
    if (key == "method") t.method = e.convert(parse_method);
    else if (key == "representation") t.representation = e.convert(parse_representation);
    else if (key == "lambda_adv") t.weights.lambda_adv = e.as_double();
    else if (key == "lambda_s") t.weights.lambda_s = e.as_double();
    else if (key == "lambda_t") t.weights.lambda_t = e.as_double();
    else if (key == "iters") t.iters = e.as_size();
    else if (key == "warmup_iters") t.warmup_iters = e.as_size();
    else if (key == "batch_size") t.batch_size = e.as_size();
    else if (key == "seg_lr") t.seg_lr = e.as_double();
    else if (key == "seg_momentum") t.seg_momentum = e.as_double();
    else if (key == "seg_weight_decay") t.seg_weight_decay = e.as_double();
    else if (key == "disc_lr") t.disc_lr = e.as_double();
    else if (key == "seed") t.seed = e.as_uint();
    else if (key == "kl_weight") t.kl_weight = e.as_double();
    else if (key == "pl_weight") t.pl_weight = e.as_double();
    else if (key == "agn_adversarial") t.agn_adversarial = e.as_bool();
    else if (key == "agn_source_ce") t.agn_source_ce = e.as_bool();
    else e.fail("unknown key '" + key + "' in [train]");
  }
}

void apply_arch(const Section& s, ArchConfig& a) {
  for (const auto& [key, e] : s) {
    if (key == "feat_widths") a.feat_widths = e.as_sizes();
    else if (key == "feat_strides") a.feat_strides = e.as_ints();
    else if (key == "feat_slope") a.feat_slope = e.as_double();
    else if (key == "disc_widths") a.disc_widths = e.as_sizes();
    else if (key == "disc_slope") a.disc_slope = e.as_double();
    else if (key == "kernel") a.kernel = e.as_size();
    else e.fail("unknown key '" + key + "' in [arch]");
  }
}

void apply_data(const Section& s, ExperimentConfig& c) {
  for (const auto& [key, e] : s) {
    if (key == "source") c.source = e.value;
    else if (key == "targets") c.targets = split_list(e.value);
    else if (key == "transfer") c.transfer = split_list(e.value);
    else if (key == "height") c.height = e.as_size();
    else if (key == "width") c.width = e.as_size();
    else if (key == "train_scenes") c.train_scenes = e.as_size();
    else if (key == "val_scenes") c.val_scenes = e.as_size();
    else if (key == "seed") c.data_seed = e.as_uint();
    else e.fail("unknown key '" + key + "' in [data]");
  }
}

DomainSpec parse_domain(const std::string& id, const Section& s) {
  DomainSpec d;
  if (auto it = s.find("base"); it != s.end()) {
    const Entry& e = it->second;
    d = e.convert([](const std::string& v) {
      try {
        return preset(v);
      } catch (const ConfigError&) {
        throw ConfigError("unknown base preset '" + v + "'");
      }
    });
  }
  d.domain_id = id;
  for (const auto& [key, e] : s) {
    if (key == "base") continue;
    if (key == "hue_shift") d.hue_shift = e.as_double();
    else if (key == "brightness") d.brightness = e.as_double();
    else if (key == "noise_sigma") d.noise_sigma = e.as_double();
    else if (key == "texture_grain") d.texture_grain = e.as_int();
    else if (key == "class_frequency_bias") {
      const auto v = e.as_doubles();
      if (v.size() != kNumSuperClasses) e.fail("class_frequency_bias needs 7 values");
      std::copy(v.begin(), v.end(), d.class_frequency_bias.begin());
    } else if (key.rfind("palette.", 0) == 0) {
      int c = -1;
      for (std::size_t k = 0; k < kNumSuperClasses; ++k) {
        if (key.substr(8) == kSuperClassNames[k]) c = static_cast<int>(k);
      }
      if (c < 0) e.fail("unknown palette class '" + key.substr(8) + "'");
      const auto v = e.as_doubles();
      if (v.size() != 3) e.fail("palette entries need 3 values (r, g, b)");
      d.palette[static_cast<std::size_t>(c)] = {v[0], v[1], v[2]};
    } else {
      e.fail("unknown key '" + key + "' in [domain." + id + "]");
    }
  }
  return d;
}

void apply_output(const Section& s, ExperimentConfig& c) {
  for (const auto& [key, e] : s) {
    if (key == "dir") c.output_dir = e.value;
    else if (key == "checkpoint_every") c.checkpoint_every = e.as_size();
    else e.fail("unknown key '" + key + "' in [output]");
  }
}

void apply_refine(const Section& s, ExperimentConfig& c) {
  for (const auto& [key, e] : s) {
    if (key == "strategy") c.strategy = e.convert(parse_pl_strategy);
    else if (key == "iters") c.refine_iters = e.as_size();
    else if (key == "keep_fraction") c.keep_fraction = e.as_double();
    else e.fail("unknown key '" + key + "' in [refine]");
  }
}

bool known_id(const ExperimentConfig& c, const std::string& id) {
  if (c.domains.count(id)) return true;
  for (const auto& p : preset_names()) {
    if (p == id) return true;
  }
  return false;
}

}  // namespace

std::size_t ExperimentConfig::effective_refine_iters() const {
  return refine_iters ? refine_iters : std::max<std::size_t>(1, train.iters / 4);
}

DomainSpec ExperimentConfig::domain(const std::string& id) const {
  if (auto it = domains.find(id); it != domains.end()) return it->second;
  return preset(id);
}

void ExperimentConfig::validate() const {
  if (targets.empty()) throw ConfigError("[data] targets must list at least one domain");
  std::set<std::string> seen{source};
  for (const auto& t : targets) {
    if (!seen.insert(t).second) throw ConfigError("domain '" + t + "' appears twice among source and targets");
  }
  for (const auto& id : seen) {
    if (!known_id(*this, id)) throw ConfigError("domain '" + id + "' is neither a preset nor a [domain." + id + "] block");
  }
  for (const auto& id : transfer) {
    if (!known_id(*this, id)) throw ConfigError("transfer domain '" + id + "' is unknown");
  }
  for (const auto& [id, d] : domains) d.validate();
  if (train.T != targets.size()) throw ConfigError("T must equal the number of targets");
  train.validate();
  if (height < 32 || width < 32) throw ConfigError("scene size must be at least 32x32");
  if (train_scenes == 0 || val_scenes == 0) throw ConfigError("train_scenes and val_scenes must be >= 1");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must lie in (0, 1]");
  if (output_dir.empty()) throw ConfigError("[output] dir must not be empty");
}

ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, Section> sections;
  std::map<std::string, std::size_t> section_line;
  std::string current;
  std::istringstream is(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      current = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> fixed{"train", "arch", "data", "output", "refine"};
      const bool is_domain = current.rfind("domain.", 0) == 0 && current.size() > 7;
      if (!fixed.count(current) && !is_domain) {
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + current + "]");
      }
      if (!section_line.emplace(current, lineno).second) {
        throw ConfigError("line " + std::to_string(lineno) + ": section [" + current + "] repeated (first at line " +
                          std::to_string(section_line[current]) + ")");
      }
      sections[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    if (current.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    Section& sec = sections[current];
    if (auto it = sec.find(key); it != sec.end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "' (first at line " +
                        std::to_string(it->second.line) + ")");
    }
    sec.emplace(key, Entry{trim(line.substr(eq + 1)), lineno});
  }

  ExperimentConfig c;
  for (const auto& [name, sec] : sections) {
    if (name == "train") apply_train(sec, c.train);
    else if (name == "arch") apply_arch(sec, c.train.arch);
    else if (name == "data") apply_data(sec, c);
    else if (name == "output") apply_output(sec, c);
    else if (name == "refine") apply_refine(sec, c);
    else c.domains.emplace(name.substr(7), parse_domain(name.substr(7), sec));
  }
  c.train.T = c.targets.size();
  c.train.num_classes = c.train.arch.num_classes;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

namespace {

std::string serialize_body(const ExperimentConfig& c, bool with_output) {
  const TrainConfig& t = c.train;
  const ArchConfig& a = t.arch;
  std::ostringstream os;
  os << "[train]\n"
     << "method = " << to_string(t.method) << '\n'
     << "representation = " << to_string(t.representation) << '\n'
     << "lambda_adv = " << fmt_double(t.weights.lambda_adv) << '\n'
     << "lambda_s = " << fmt_double(t.weights.lambda_s) << '\n'
     << "lambda_t = " << fmt_double(t.weights.lambda_t) << '\n'
     << "iters = " << t.iters << '\n'
     << "warmup_iters = " << t.warmup_iters << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "seg_lr = " << fmt_double(t.seg_lr) << '\n'
     << "seg_momentum = " << fmt_double(t.seg_momentum) << '\n'
     << "seg_weight_decay = " << fmt_double(t.seg_weight_decay) << '\n'
     << "disc_lr = " << fmt_double(t.disc_lr) << '\n'
     << "seed = " << t.seed << '\n'
     << "kl_weight = " << fmt_double(t.kl_weight) << '\n'
     << "pl_weight = " << fmt_double(t.pl_weight) << '\n'
     << "agn_adversarial = " << (t.agn_adversarial ? "true" : "false") << '\n'
     << "agn_source_ce = " << (t.agn_source_ce ? "true" : "false") << '\n'
     << "\n[arch]\n"
     << "feat_widths = " << join(a.feat_widths) << '\n'
     << "feat_strides = " << join(a.feat_strides) << '\n'
     << "feat_slope = " << fmt_double(a.feat_slope) << '\n'
     << "disc_widths = " << join(a.disc_widths) << '\n'
     << "disc_slope = " << fmt_double(a.disc_slope) << '\n'
     << "kernel = " << a.kernel << '\n'
     << "\n[data]\n"
     << "source = " << c.source << '\n'
     << "targets = " << join(c.targets) << '\n'
     << "transfer = " << join(c.transfer) << '\n'
     << "height = " << c.height << '\n'
     << "width = " << c.width << '\n'
     << "train_scenes = " << c.train_scenes << '\n'
     << "val_scenes = " << c.val_scenes << '\n'
     << "seed = " << c.data_seed << '\n';
  for (const auto& [id, d] : c.domains) {
    os << "\n[domain." << id << "]\n";
    for (std::size_t k = 0; k < kNumSuperClasses; ++k) {
      const Rgb& p = d.palette[k];
      os << "palette." << kSuperClassNames[k] << " = " << join(std::vector<double>{p[0], p[1], p[2]}) << '\n';
    }
    os << "hue_shift = " << fmt_double(d.hue_shift) << '\n'
       << "brightness = " << fmt_double(d.brightness) << '\n'
       << "noise_sigma = " << fmt_double(d.noise_sigma) << '\n'
       << "class_frequency_bias = "
       << join(std::vector<double>(d.class_frequency_bias.begin(), d.class_frequency_bias.end())) << '\n'
       << "texture_grain = " << d.texture_grain << '\n';
  }
  if (with_output) {
    os << "\n[output]\n"
       << "dir = " << c.output_dir << '\n'
       << "checkpoint_every = " << c.checkpoint_every << '\n';
  }
  os << "\n[refine]\n"
     << "strategy = " << to_string(c.strategy) << '\n'
     << "iters = " << c.refine_iters << '\n'
     << "keep_fraction = " << fmt_double(c.keep_fraction) << '\n';
  return os.str();
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) { return serialize_body(c, true); }

std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(serialize_body(c, false)); }

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mtuda
