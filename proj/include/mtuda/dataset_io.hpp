#pragma once

// On-disk dataset format.
//
//   <dir>/manifest.txt   "mtuda-dataset 1", then "domain <id>", "labeled 0|1",
//                        "count <n>", then one "<stem>\t<domain_id>" per scene
//   <dir>/<stem>.img     "MTIMG1", u32 rank, rank x u64 dims, fp64 LE values
//   <dir>/<stem>.lbl     "MTLBL1", u32 rank, rank x u64 dims, u8 values (255 = IGNORE)

#include <filesystem>
#include <string>

#include "mtuda/synth.hpp"

namespace mtuda {

void write_image_file(const std::filesystem::path& path, const Tensor& image);
Tensor read_image_file(const std::filesystem::path& path);

/// Labels must lie in [0, 254] or be IGNORE. Written as [n, h, w] when n > 1, else [h, w].
void write_label_file(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_file(const std::filesystem::path& path);

/// Creates `dir` if needed. Ground truth is written for every dataset.
void write_dataset(const std::filesystem::path& dir, const DomainDataset& ds);
DomainDataset read_dataset(const std::filesystem::path& dir);

}  // namespace mtuda
