#include "pmtk/metrics.hpp"

#include <string>

#include "pmtk/error.hpp"

namespace pmtk {

SegMetrics binary_metrics(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("mask sizes differ: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
  }
  std::size_t tp = 0, fp = 0, fn = 0, pos_pred = 0, pos_true = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    pos_pred += p;
    pos_true += t;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (pos_pred == 0 && pos_true == 0) return {1.0, 1.0, 1.0};
  if (pos_pred == 0 || pos_true == 0) return {0.0, 0.0, 0.0};
  const double dtp = static_cast<double>(tp);
  return {dtp / static_cast<double>(tp + fp), dtp / static_cast<double>(tp + fn),
          2.0 * dtp / static_cast<double>(2 * tp + fp + fn)};
}

void MetricMean::add(const SegMetrics& m) {
  sum_.precision += m.precision;
  sum_.recall += m.recall;
  sum_.dice += m.dice;
  ++n_;
}

SegMetrics MetricMean::mean() const {
  if (n_ == 0) return {};
  const double n = static_cast<double>(n_);
  return {sum_.precision / n, sum_.recall / n, sum_.dice / n};
}

}  // namespace pmtk
