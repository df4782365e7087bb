#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dann/tensor.hpp"

namespace dann {

// RDT binary tensor record. Byte layout is normative:
//   "RDT1" | u32 LE rank | rank x u32 LE dims | prod(dims) x f32 LE row-major
void write_rdt(std::ostream& os, const Tensor& t);
Tensor read_rdt(std::istream& is, const std::string& context);

void save_rdt(const std::filesystem::path& path, const Tensor& t);
Tensor load_rdt(const std::filesystem::path& path);

// Checkpoint file: a single JSON manifest line naming each tensor and its
// role, followed by the tensors as consecutive RDT records in that order.
struct CheckpointEntry {
  std::string name;
  std::string role;
  Tensor tensor;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

}  // namespace dann
