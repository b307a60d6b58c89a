#pragma once

#include <span>

namespace pmtk {

struct SegMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double dice = 0.0;
};

// Binary overlap scores of nonzero pixels. Both masks empty gives (1, 1, 1);
// exactly one empty gives (0, 0, 0). Throws DimensionError on a size mismatch.
SegMetrics binary_metrics(std::span<const int> pred, std::span<const int> truth);

// Running per-image mean.
class MetricMean {
 public:
  void add(const SegMetrics& m);
  SegMetrics mean() const;
  std::size_t count() const { return n_; }

 private:
  SegMetrics sum_;
  std::size_t n_ = 0;
};

}  // namespace pmtk
