#pragma once

// Grayscale image I/O, dataset directories, deterministic splits and the
// synthetic echo-like generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pmtk/tensor.hpp"

namespace pmtk::data {

struct Sample {
  std::string id;
  Tensor<double> image;   // [1, H, W] in [0, 1]
  std::vector<int> mask;  // H*W, 0 or 1
  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
};

// ---- PGM ------------------------------------------------------------------

// Binary P5 with maxval 255 only. Returns [1, H, W] scaled to [0, 1].
Tensor<double> load_image(const std::filesystem::path& path);
// Accepts [H, W] or [1, H, W]; values are clamped to [0, 1] and rounded.
void save_image(const std::filesystem::path& path, const Tensor<double>& image);

// Masks on disk hold 0 / 255; loading thresholds at 128.
std::vector<int> load_mask(const std::filesystem::path& path, std::size_t* height = nullptr,
                           std::size_t* width = nullptr);
void save_mask(const std::filesystem::path& path, const std::vector<int>& mask, std::size_t height, std::size_t width);

// ---- padding --------------------------------------------------------------

struct Padded {
  Tensor<double> image;
  std::size_t height = 0;  // original extents
  std::size_t width = 0;
};

// Mirror padding (edge sample not repeated) on the bottom and right up to the
// next multiple of m; m must be a power of two. Works on [.., H, W].
Padded pad_to_multiple(const Tensor<double>& x, std::size_t m = 32);
Tensor<double> crop(const Tensor<double>& x, std::size_t height, std::size_t width);
std::vector<int> pad_mask(const std::vector<int>& mask, std::size_t height, std::size_t width, std::size_t m = 32);

// ---- synthetic data -------------------------------------------------------

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t count = 64;
  std::size_t size = 64;
  double noise_sigma = 0.3;
  double shadow_prob = 0.3;
  double deform = 0.15;

  void validate() const;
};

inline constexpr double kRegionContrast = 0.4;
inline constexpr double kMaxRamp = 0.08;  // background ramp, peak to peak

// Sample i is drawn from its own generator seeded with seed ^ i.
std::vector<Sample> synth_generate(const SynthConfig& cfg);
Sample synth_sample(const SynthConfig& cfg, std::size_t index);

// ---- splits ---------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Shuffled by seed; val and test take floor(n * ratio), train the rest.
SplitIndices split(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed);

// ---- dataset directories --------------------------------------------------

enum class Split { train, val, test };
Split parse_split(const std::string& s);
std::string to_string(Split s);

struct Dataset {
  std::vector<Sample> samples;
  std::vector<Split> splits;

  std::vector<Sample> subset(Split s) const;
};

// images/<id>.pgm, masks/<id>.pgm, manifest.csv (id,split).
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

// Images stacked as [N, 1, H, W] in precision T plus flattened labels.
template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

}  // namespace pmtk::data
