#pragma once

// Wall-clock probes: token-mixer scaling in sequence length and a
// model-level summary.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "pmtk/model.hpp"

namespace pmtk::bench {

struct ProbeConfig {
  std::vector<std::size_t> lengths{256, 512, 1024, 2048};
  std::size_t dim = 16;
  std::size_t state = 8;
  std::size_t reps = 5;
  std::uint64_t seed = 0;
  bool attention = true;  // also time the quadratic reference mixer

  void validate() const;
};

struct MixerTiming {
  std::size_t length = 0;
  std::string mixer;  // "ssm" or "attention"
  double mean_ms = 0.0;
  double std_ms = 0.0;
};

// Rows ordered by mixer, then length.
template <typename T>
std::vector<MixerTiming> scan_complexity_probe(const ProbeConfig& cfg);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);
double mixer_slope(const std::vector<MixerTiming>& rows, const std::string& mixer);

void write_timing_csv(std::ostream& os, const std::vector<MixerTiming>& rows);

struct ModelProfile {
  std::size_t params = 0;
  std::size_t batch = 0;
  std::size_t image_size = 0;
  double forward_ms_mean = 0.0;
  double forward_ms_std = 0.0;
  // Parameters plus every value recorded during one training forward pass,
  // doubled for the gradients a backward pass would allocate.
  double peak_mem_mb = 0.0;
};

template <typename T>
ModelProfile profile_model(const model::ModelConfig& cfg, std::size_t batch, std::size_t reps, std::uint64_t seed);

void write_profile_table(std::ostream& os, const ModelProfile& p);

}  // namespace pmtk::bench
