#pragma once

// Raw tensor record:
//   "PMTK" | u8 version (1) | u8 precision (0 = f32, 1 = f64) | u8 rank |
//   rank x u32 extents (LE) | prod(extents) floats (LE)
//
// A checkpoint is a directory holding `weights.pmtk` (records back to back)
// and `manifest.txt` with one "name shape offset" line per record, where
// offset is the byte position of the record inside weights.pmtk.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pmtk/tensor.hpp"

namespace pmtk::io {

inline constexpr char kTensorMagic[4] = {'P', 'M', 'T', 'K'};
inline constexpr std::uint8_t kTensorVersion = 1;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

// Converts to T when the record was written at the other precision.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NamedTensors<T>& tensors);
template <typename T>
NamedTensors<T> load_checkpoint(const std::filesystem::path& dir);

}  // namespace pmtk::io
