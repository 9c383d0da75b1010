#pragma once

// Training-state checkpoints.
//
//   "MTUDA1"
//   u64 header length, header: UTF-8 JSON (arch, train config, iteration,
//       config hash, heads, discriminator keys, sampler and optimizer scalars)
//   u64 record count, then per record:
//       u32 name length, name, u32 rank, rank x u64 dims, fp64 LE payload
//
// Records cover parameters ("seg.*", "disc.*"), optimizer buffers
// ("opt.sgd.<k>", "opt.adam.<key>.m.<k>", ...) and loss series ("history.*").

#include <filesystem>
#include <string>
#include <vector>

#include "mtuda/trainers.hpp"

namespace mtuda {

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

std::string encode_checkpoint(const TrainState& state);
/// Throws FormatError on bad magic, truncation, trailing bytes or records
/// that do not match the declared structure.
TrainState decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Raw view for tools and tests: header JSON text and records in file order.
struct CheckpointContents {
  std::string header;
  std::vector<TensorRecord> records;
};
CheckpointContents read_checkpoint_contents(const std::string& bytes);

/// Field-by-field equality of two states, bitwise on every double.
bool states_equal(const TrainState& a, const TrainState& b);

}  // namespace mtuda
