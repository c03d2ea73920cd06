#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dspl/tensor.hpp"

namespace dspl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Flat little-endian checkpoint layout:
///
///   "DSPL1"
///   repeated until EOF:
///     u32 name_length, name bytes (UTF-8)
///     u32 rank, u64 extent[rank]
///     f64 payload[product(extents)], row-major
void write_tensors(std::ostream& os, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensors(std::istream& is);

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

}  // namespace dspl
