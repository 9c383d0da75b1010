#include "mtuda/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mtuda/errors.hpp"

namespace mtuda {

namespace {

using nlohmann::json;

constexpr char kMagic[] = "MTUDA1";
constexpr std::size_t kMagicLen = 6;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

json arch_to_json(const ArchConfig& a) {
  return {{"in_channels", a.in_channels},   {"num_classes", a.num_classes}, {"feat_widths", a.feat_widths},
          {"feat_strides", a.feat_strides}, {"feat_slope", a.feat_slope},   {"disc_widths", a.disc_widths},
          {"disc_slope", a.disc_slope},     {"kernel", a.kernel}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.in_channels = j.at("in_channels").get<std::size_t>();
  a.num_classes = j.at("num_classes").get<std::size_t>();
  a.feat_widths = j.at("feat_widths").get<std::vector<std::size_t>>();
  a.feat_strides = j.at("feat_strides").get<std::vector<int>>();
  a.feat_slope = j.at("feat_slope").get<double>();
  a.disc_widths = j.at("disc_widths").get<std::vector<std::size_t>>();
  a.disc_slope = j.at("disc_slope").get<double>();
  a.kernel = j.at("kernel").get<std::size_t>();
  return a;
}

json config_to_json(const TrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"representation", to_string(c.representation)},
          {"lambda_adv", c.weights.lambda_adv},
          {"lambda_s", c.weights.lambda_s},
          {"lambda_t", c.weights.lambda_t},
          {"iters", c.iters},
          {"warmup_iters", c.warmup_iters},
          {"batch_size", c.batch_size},
          {"seg_lr", c.seg_lr},
          {"seg_momentum", c.seg_momentum},
          {"seg_weight_decay", c.seg_weight_decay},
          {"disc_lr", c.disc_lr},
          {"seed", c.seed},
          {"T", c.T},
          {"num_classes", c.num_classes},
          {"kl_weight", c.kl_weight},
          {"agn_adversarial", c.agn_adversarial},
          {"agn_source_ce", c.agn_source_ce},
          {"pl_weight", c.pl_weight}};
}

TrainConfig config_from_json(const json& j, const ArchConfig& arch) {
  TrainConfig c;
  c.method = parse_method(j.at("method").get<std::string>());
  c.representation = parse_representation(j.at("representation").get<std::string>());
  c.weights.lambda_adv = j.at("lambda_adv").get<double>();
  c.weights.lambda_s = j.at("lambda_s").get<double>();
  c.weights.lambda_t = j.at("lambda_t").get<double>();
  c.iters = j.at("iters").get<std::size_t>();
  c.warmup_iters = j.at("warmup_iters").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seg_lr = j.at("seg_lr").get<double>();
  c.seg_momentum = j.at("seg_momentum").get<double>();
  c.seg_weight_decay = j.at("seg_weight_decay").get<double>();
  c.disc_lr = j.at("disc_lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.T = j.at("T").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.kl_weight = j.at("kl_weight").get<double>();
  c.agn_adversarial = j.at("agn_adversarial").get<bool>();
  c.agn_source_ce = j.at("agn_source_ce").get<bool>();
  c.pl_weight = j.at("pl_weight").get<double>();
  c.arch = arch;
  return c;
}

json sampler_to_json(const BatchSampler& s) {
  return {{"groups", s.groups()}, {"rng", s.rng_state()}, {"order", s.order()}, {"cursor", s.cursor()}};
}

BatchSampler sampler_from_json(const json& j) {
  BatchSampler s(j.at("groups").get<std::vector<std::vector<std::size_t>>>(), 0);
  s.restore(j.at("rng").get<std::string>(), j.at("order").get<std::vector<std::size_t>>(),
            j.at("cursor").get<std::size_t>());
  return s;
}

std::vector<std::size_t> disc_keys(const std::map<std::size_t, DiscriminatorParams>& m) {
  std::vector<std::size_t> out;
  for (const auto& [n, d] : m) out.push_back(n);
  return out;
}

void add_buffers(std::vector<TensorRecord>& recs, const std::string& prefix,
                 const std::vector<std::vector<double>>& bufs) {
  for (std::size_t k = 0; k < bufs.size(); ++k) {
    if (!bufs[k].empty()) recs.push_back({prefix + std::to_string(k), {bufs[k].size()}, bufs[k]});
  }
}

std::vector<TensorRecord> state_records(const TrainState& cs) {
  auto& s = const_cast<TrainState&>(cs);  // named_parameters() is non-const; nothing is modified
  std::vector<TensorRecord> recs;
  for (const auto& [name, t] : s.segmenter.named_parameters()) {
    recs.push_back({"seg." + name, t->shape(), {t->values().begin(), t->values().end()}});
  }
  for (const auto& [name, t] : s.bank.named_parameters()) {
    recs.push_back({name, t->shape(), {t->values().begin(), t->values().end()}});
  }
  add_buffers(recs, "opt.sgd.", s.sgd.velocity);
  for (const auto& [key, a] : s.adam) {
    add_buffers(recs, "opt.adam." + key + ".m.", a.m);
    add_buffers(recs, "opt.adam." + key + ".v.", a.v);
  }
  for (const auto& [name, series] : s.history) recs.push_back({"history." + name, {series.size()}, series});
  return recs;
}

json state_header(const TrainState& s) {
  json adam = json::object();
  for (const auto& [key, a] : s.adam) {
    adam[key] = {{"step", a.step}, {"slots", a.m.size()}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
  }
  json targets = json::array();
  for (const auto& t : s.target_samplers) targets.push_back(sampler_to_json(t));
  json history = json::array();
  for (const auto& [name, series] : s.history) history.push_back(name);
  return {{"format", 1},
          {"arch", arch_to_json(s.cfg.arch)},
          {"config", config_to_json(s.cfg)},
          {"iteration", s.iteration},
          {"config_hash", s.config_hash},
          {"heads", s.segmenter.head_ids()},
          {"disc_st", disc_keys(s.bank.source_target)},
          {"disc_tt", disc_keys(s.bank.target_target)},
          {"sgd_slots", s.sgd.velocity.size()},
          {"adam", adam},
          {"source_sampler", sampler_to_json(s.source_sampler)},
          {"target_samplers", targets},
          {"history", history}};
}

void fill_tensor(Tensor& t, const TensorRecord& r) {
  if (t.shape() != r.shape) {
    throw FormatError("record '" + r.name + "' has shape " + shape_str(r.shape) + ", expected " + shape_str(t.shape()));
  }
  std::copy(r.values.begin(), r.values.end(), t.values().begin());
}

}  // namespace

CheckpointContents read_checkpoint_contents(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(kMagicLen) != std::string(kMagic, kMagicLen)) throw FormatError("not a checkpoint: bad magic");
  CheckpointContents out;
  const std::uint64_t hlen = r.u64();
  if (hlen > r.remaining()) throw FormatError("checkpoint truncated in header");
  out.header = r.str(hlen);
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("record '" + rec.name + "' has implausible rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.u64());
    const std::size_t n = shape_numel(rec.shape);
    if (n > r.remaining() / sizeof(double)) throw FormatError("checkpoint truncated in record '" + rec.name + "'");
    rec.values.resize(n);
    r.bytes(rec.values.data(), n * sizeof(double));
    out.records.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last checkpoint record");
  return out;
}

std::string encode_checkpoint(const TrainState& state) {
  if (state.refine.active) throw ContractError("cannot checkpoint during a refinement pass");
  Writer w;
  w.bytes(kMagic, kMagicLen);
  const std::string header = state_header(state).dump();
  w.u64(header.size());
  w.bytes(header.data(), header.size());
  const auto recs = state_records(state);
  w.u64(recs.size());
  for (const auto& r : recs) {
    w.str32(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) w.u64(d);
    w.bytes(r.values.data(), r.values.size() * sizeof(double));
  }
  return w.take();
}

TrainState decode_checkpoint(const std::string& bytes) {
  const CheckpointContents c = read_checkpoint_contents(bytes);
  TrainState s;
  try {
    const json h = json::parse(c.header);
    if (h.at("format").get<int>() != 1) throw FormatError("unsupported checkpoint format version");
    const ArchConfig arch = arch_from_json(h.at("arch"));
    s.cfg = config_from_json(h.at("config"), arch);
    s.iteration = h.at("iteration").get<std::size_t>();
    s.config_hash = h.at("config_hash").get<std::uint64_t>();
    s.segmenter = init_segmenter(arch, h.at("heads").get<std::vector<std::string>>(), 0);
    for (std::size_t n : h.at("disc_st").get<std::vector<std::size_t>>()) {
      s.bank.source_target.emplace(n, init_discriminator(arch, 0));
    }
    for (std::size_t n : h.at("disc_tt").get<std::vector<std::size_t>>()) {
      s.bank.target_target.emplace(n, init_discriminator(arch, 0));
    }
    s.sgd.velocity.resize(h.at("sgd_slots").get<std::size_t>());
    for (const auto& [key, a] : h.at("adam").items()) {
      AdamState st;
      st.step = a.at("step").get<std::uint64_t>();
      st.beta1 = a.at("beta1").get<double>();
      st.beta2 = a.at("beta2").get<double>();
      st.eps = a.at("eps").get<double>();
      st.m.resize(a.at("slots").get<std::size_t>());
      st.v.resize(st.m.size());
      s.adam.emplace(key, std::move(st));
    }
    s.source_sampler = sampler_from_json(h.at("source_sampler"));
    for (const auto& t : h.at("target_samplers")) s.target_samplers.push_back(sampler_from_json(t));
    for (const auto& name : h.at("history")) s.history[name.get<std::string>()];
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }

  std::map<std::string, Tensor*> params;
  for (const auto& [name, t] : s.segmenter.named_parameters()) params["seg." + name] = t;
  for (const auto& [name, t] : s.bank.named_parameters()) params[name] = t;
  std::size_t filled = 0;
  auto slot = [](std::vector<std::vector<double>>& bufs, const std::string& idx, const TensorRecord& r) {
    std::size_t k = 0;
    try {
      k = std::stoul(idx);
    } catch (const std::exception&) {
      throw FormatError("bad optimizer record name '" + r.name + "'");
    }
    if (k >= bufs.size() || r.shape.size() != 1) throw FormatError("optimizer record '" + r.name + "' out of range");
    bufs[k] = r.values;
  };
  for (const auto& r : c.records) {
    if (auto it = params.find(r.name); it != params.end()) {
      fill_tensor(*it->second, r);
      ++filled;
    } else if (r.name.rfind("opt.sgd.", 0) == 0) {
      slot(s.sgd.velocity, r.name.substr(8), r);
    } else if (r.name.rfind("opt.adam.", 0) == 0) {
      // opt.adam.<key>.<m|v>.<k>; keys contain one dot ("st.1").
      const std::string rest = r.name.substr(9);
      const std::size_t p2 = rest.find('.', rest.find('.') + 1);
      if (p2 == std::string::npos || p2 + 3 > rest.size()) throw FormatError("bad optimizer record '" + r.name + "'");
      auto it = s.adam.find(rest.substr(0, p2));
      if (it == s.adam.end()) throw FormatError("optimizer record for unknown discriminator '" + r.name + "'");
      const char which = rest[p2 + 1];
      if (which != 'm' && which != 'v') throw FormatError("bad optimizer record '" + r.name + "'");
      slot(which == 'm' ? it->second.m : it->second.v, rest.substr(p2 + 3), r);
    } else if (r.name.rfind("history.", 0) == 0) {
      auto it = s.history.find(r.name.substr(8));
      if (it == s.history.end()) throw FormatError("undeclared loss series '" + r.name + "'");
      it->second = r.values;
    } else {
      throw FormatError("unknown checkpoint record '" + r.name + "'");
    }
  }
  if (filled != params.size()) throw FormatError("checkpoint is missing parameter records");
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(state);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

bool states_equal(const TrainState& a, const TrainState& b) { return encode_checkpoint(a) == encode_checkpoint(b); }

}  // namespace mtuda
