#include "mtuda/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mtuda/errors.hpp"

namespace mtuda {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace fs = std::filesystem;

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const fs::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(path.string() + ": truncated file");
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  return is;
}

void expect_magic(std::istream& is, const fs::path& path, const char* magic) {
  char buf[6];
  if (!is.read(buf, 6) || std::memcmp(buf, magic, 6) != 0) {
    throw FormatError(path.string() + ": bad magic, expected " + magic);
  }
}

Shape read_dims(std::istream& is, const fs::path& path) {
  const auto rank = get<std::uint32_t>(is, path);
  if (rank > 8) throw FormatError(path.string() + ": implausible rank");
  Shape dims(rank);
  for (auto& d : dims) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
  return dims;
}

void expect_end(std::istream& is, const fs::path& path) {
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
}

std::string stem_of(std::size_t i) {
  std::ostringstream os;
  os << "scene_" << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void write_image_file(const fs::path& path, const Tensor& image) {
  auto os = open_out(path);
  os.write("MTIMG1", 6);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(image.rank()));
  for (std::size_t d : image.shape()) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(image.values().data()),
           static_cast<std::streamsize>(image.numel() * sizeof(double)));
  if (!os) throw FormatError("write failed: " + path.string());
}

Tensor read_image_file(const fs::path& path) {
  auto is = open_in(path);
  expect_magic(is, path, "MTIMG1");
  Shape dims = read_dims(is, path);
  std::vector<double> values(shape_numel(dims));
  if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
    throw FormatError(path.string() + ": truncated payload");
  }
  expect_end(is, path);
  return Tensor(std::move(dims), std::move(values));
}

void write_label_file(const fs::path& path, const LabelMap& labels) {
  auto os = open_out(path);
  os.write("MTLBL1", 6);
  if (labels.n > 1) {
    put<std::uint32_t>(os, 3);
    put<std::uint64_t>(os, labels.n);
  } else {
    put<std::uint32_t>(os, 2);
  }
  put<std::uint64_t>(os, labels.h);
  put<std::uint64_t>(os, labels.w);
  std::vector<std::uint8_t> bytes(labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const std::int32_t v = labels.values[i];
    if (v < 0 || v > 255) throw FormatError("label value " + std::to_string(v) + " does not fit in a byte");
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed: " + path.string());
}

LabelMap read_label_file(const fs::path& path) {
  auto is = open_in(path);
  expect_magic(is, path, "MTLBL1");
  Shape dims = read_dims(is, path);
  if (dims.size() != 2 && dims.size() != 3) throw FormatError(path.string() + ": label map must have rank 2 or 3");
  const std::size_t n = dims.size() == 3 ? dims[0] : 1;
  LabelMap out(n, dims[dims.size() - 2], dims.back(), 0);
  std::vector<std::uint8_t> bytes(out.size());
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path.string() + ": truncated payload");
  }
  expect_end(is, path);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.values[i] = bytes[i];
  return out;
}

void write_dataset(const fs::path& dir, const DomainDataset& ds) {
  fs::create_directories(dir);
  std::ofstream man(dir / "manifest.txt", std::ios::trunc);
  if (!man) throw FormatError("cannot write " + (dir / "manifest.txt").string());
  man << "mtuda-dataset 1\n";
  man << "domain " << ds.domain_id() << "\n";
  man << "labeled " << (ds.labeled() ? 1 : 0) << "\n";
  man << "count " << ds.size() << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string stem = stem_of(i);
    write_image_file(dir / (stem + ".img"), ds.image(i));
    write_label_file(dir / (stem + ".lbl"), ds.ground_truth(i));
    man << stem << "\t" << ds.scene_domain(i) << "\n";
  }
  if (!man) throw FormatError("write failed: manifest in " + dir.string());
}

DomainDataset read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.txt";
  std::ifstream man(mpath);
  if (!man) throw FormatError("cannot read " + mpath.string());
  std::string line, key, domain;
  int labeled = -1;
  std::size_t count = 0;
  std::getline(man, line);
  if (line != "mtuda-dataset 1") throw FormatError(mpath.string() + ":1: not a dataset manifest");
  auto header = [&](const char* expect, int lineno) {
    if (!std::getline(man, line)) throw FormatError(mpath.string() + ": truncated header");
    std::istringstream ls(line);
    ls >> key;
    if (key != expect) throw FormatError(mpath.string() + ":" + std::to_string(lineno) + ": expected '" + expect + "'");
    std::string rest;
    std::getline(ls >> std::ws, rest);
    return rest;
  };
  domain = header("domain", 2);
  labeled = std::stoi(header("labeled", 3));
  count = std::stoull(header("count", 4));
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(man, line)) throw FormatError(mpath.string() + ": fewer scenes than declared");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(mpath.string() + ":" + std::to_string(i + 5) + ": expected '<stem>\\t<domain>'");
    }
    Scene s;
    const std::string stem = line.substr(0, tab);
    s.domain_id = line.substr(tab + 1);
    s.image = read_image_file(dir / (stem + ".img"));
    s.labels = read_label_file(dir / (stem + ".lbl"));
    scenes.push_back(std::move(s));
  }
  return DomainDataset(domain, labeled == 1, std::move(scenes));
}

}  // namespace mtuda
