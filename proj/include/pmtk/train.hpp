#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "pmtk/data.hpp"
#include "pmtk/metrics.hpp"
#include "pmtk/model.hpp"

namespace pmtk::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 8;
  double lr = 0.002;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
  void write(KeyValues& kv) const;
  static TrainConfig read(const KeyValues& kv);
};

// Heavy-ball SGD: v = momentum * v + g; p -= lr * v.
template <typename T>
class Sgd {
 public:
  Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void step(io::NamedTensors<T>& params, const std::vector<Tensor<T>>& grads);

 private:
  double lr_, momentum_;
  std::vector<Tensor<T>> velocity_;
};

// One forward/backward/update on a batch. Returns the loss terms before the
// update.
template <typename T>
model::LossTerms train_step(model::Model<T>& m, Sgd<T>& opt, const data::Batch<T>& batch);

// Loss of a batch without updating.
template <typename T>
model::LossTerms batch_loss(const model::Model<T>& m, const data::Batch<T>& batch);

// Per-image mean metrics of the primary head. Samples are run in
// consecutive chunks of near-equal size, none larger than batch.
template <typename T>
SegMetrics evaluate(const model::Model<T>& m, const std::vector<data::Sample>& samples, std::size_t batch = 8);

struct EpochLog {
  std::size_t epoch = 0;
  model::LossTerms loss;  // mean over the epoch's steps
  SegMetrics val;
  std::size_t steps = 0;
};

inline constexpr const char* kLogHeader = "epoch,loss_prim,loss_fcn,loss_pmd,loss_vim,val_precision,val_recall,val_dice";
void write_log_row(std::ostream& os, const EpochLog& e);

using EpochCallback = std::function<void(const EpochLog&)>;

// Throws DataError on an empty training set. With an empty validation set
// the val columns hold the training-set metrics.
template <typename T>
std::vector<EpochLog> train_toy(model::Model<T>& m, const std::vector<data::Sample>& train_set,
                                const std::vector<data::Sample>& val_set, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {});

struct AblationRow {
  model::Variant variant;
  SegMetrics metrics;
  std::size_t steps = 0;
};

// Trains every variant from the same seed and budget and scores it on eval_set.
template <typename T>
std::vector<AblationRow> ablate(const model::ModelConfig& base, const std::vector<model::Variant>& variants,
                                const std::vector<data::Sample>& train_set, const std::vector<data::Sample>& eval_set,
                                const TrainConfig& cfg);

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace pmtk::train
