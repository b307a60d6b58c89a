#include "pmtk/train.hpp"

#include <cmath>
#include <iomanip>

#include "pmtk/kernels.hpp"
#include "pmtk/rng.hpp"

namespace pmtk::train {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
}

void TrainConfig::write(KeyValues& kv) const {
  kv.set("train.epochs", epochs);
  kv.set("train.batch", batch);
  kv.set("train.lr", lr);
  kv.set("train.momentum", momentum);
  kv.set("train.seed", seed);
}

TrainConfig TrainConfig::read(const KeyValues& kv) {
  TrainConfig c;
  c.epochs = kv.integer("train.epochs", c.epochs);
  c.batch = kv.integer("train.batch", c.batch);
  c.lr = kv.real("train.lr", c.lr);
  c.momentum = kv.real("train.momentum", c.momentum);
  c.seed = kv.integer("train.seed", c.seed);
  c.validate();
  return c;
}

template <typename T>
void Sgd<T>::step(io::NamedTensors<T>& params, const std::vector<Tensor<T>>& grads) {
  if (grads.size() != params.size()) throw DimensionError("gradient count does not match parameter count");
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.emplace_back(p.second.shape());
  }
  const T mu = static_cast<T>(momentum_), lr = static_cast<T>(lr_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i].second;
    Tensor<T>& v = velocity_[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mu * v[j] + g[j];
      p[j] -= lr * v[j];
    }
  }
}

template <typename T>
model::LossTerms train_step(model::Model<T>& m, Sgd<T>& opt, const data::Batch<T>& batch) {
  std::vector<Tensor<T>> grads;
  model::LossTerms terms;
  {
    Tape<T> tape;
    const model::Bound<T> p = m.bind(tape);
    Var<T> x = tape.constant(batch.images);
    const auto out = model::forward(x, p, m.config());
    const auto loss = model::total_loss(out, batch.labels, m.config().loss);
    if (!std::isfinite(loss.terms.total)) throw NumericError("training loss is not finite");
    tape.backward(loss.total);
    grads.reserve(p.vars().size());
    for (Var<T> v : p.vars()) grads.push_back(tape.grad(v));
    terms = loss.terms;
  }
  opt.step(m.params(), grads);
  return terms;
}

template <typename T>
model::LossTerms batch_loss(const model::Model<T>& m, const data::Batch<T>& batch) {
  Tape<T> tape(false);
  const model::Bound<T> p = m.bind(tape);
  const auto out = model::forward(tape.constant(batch.images), p, m.config());
  return model::total_loss(out, batch.labels, m.config().loss).terms;
}

namespace {

// Consecutive chunks of near-equal size, none larger than cap.
std::vector<std::vector<std::size_t>> even_chunks(const std::vector<std::size_t>& idx, std::size_t cap) {
  std::vector<std::vector<std::size_t>> out;
  if (idx.empty()) return out;
  const std::size_t n = idx.size(), chunks = (n + cap - 1) / cap;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = n / chunks + (c < n % chunks ? 1 : 0);
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(pos), idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

}  // namespace

template <typename T>
SegMetrics evaluate(const model::Model<T>& m, const std::vector<data::Sample>& samples, std::size_t batch) {
  if (batch == 0) throw ConfigError("evaluation batch must be at least 1");
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  MetricMean mean;
  for (const auto& chunk : even_chunks(idx, batch)) {
    const data::Batch<T> b = data::make_batch<T>(samples, chunk);
    const std::vector<int> pred = model::predict(m, b.images);
    const std::size_t px = pred.size() / chunk.size();
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      mean.add(binary_metrics(std::span<const int>(pred).subspan(n * px, px),
                              std::span<const int>(b.labels).subspan(n * px, px)));
    }
  }
  return mean.mean();
}

void write_log_row(std::ostream& os, const EpochLog& e) {
  os << e.epoch << ',' << format_real(e.loss.prim) << ',' << format_real(e.loss.fcn) << ','
     << format_real(e.loss.pmd) << ',' << format_real(e.loss.vim) << ',' << format_real(e.val.precision) << ','
     << format_real(e.val.recall) << ',' << format_real(e.val.dice) << '\n';
}

template <typename T>
std::vector<EpochLog> train_toy(model::Model<T>& m, const std::vector<data::Sample>& train_set,
                                const std::vector<data::Sample>& val_set, const TrainConfig& cfg,
                                const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  Rng rng(cfg.seed);
  Sgd<T> opt(cfg.lr, cfg.momentum);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<EpochLog> logs;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog log;
    log.epoch = epoch;
    for (const auto& chunk : even_chunks(order, cfg.batch)) {
      const auto terms = train_step(m, opt, data::make_batch<T>(train_set, chunk));
      log.loss.prim += terms.prim;
      log.loss.fcn += terms.fcn;
      log.loss.pmd += terms.pmd;
      log.loss.vim += terms.vim;
      log.loss.total += terms.total;
      ++log.steps;
    }
    const double n = static_cast<double>(log.steps);
    log.loss.prim /= n;
    log.loss.fcn /= n;
    log.loss.pmd /= n;
    log.loss.vim /= n;
    log.loss.total /= n;
    log.val = evaluate(m, val_set.empty() ? train_set : val_set, cfg.batch);
    if (on_epoch) on_epoch(log);
    logs.push_back(log);
  }
  return logs;
}

template <typename T>
std::vector<AblationRow> ablate(const model::ModelConfig& base, const std::vector<model::Variant>& variants,
                                const std::vector<data::Sample>& train_set, const std::vector<data::Sample>& eval_set,
                                const TrainConfig& cfg) {
  std::vector<AblationRow> rows;
  for (model::Variant v : variants) {
    model::ModelConfig mc = base;
    mc.variant = v;
    model::Model<T> m(mc, cfg.seed);
    const auto logs = train_toy(m, train_set, {}, cfg);
    std::size_t steps = 0;
    for (const auto& l : logs) steps += l.steps;
    rows.push_back({v, evaluate(m, eval_set, cfg.batch), steps});
  }
  return rows;
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,precision,recall,dice,steps\n";
  for (const auto& r : rows) {
    os << model::to_string(r.variant) << ',' << format_real(r.metrics.precision) << ','
       << format_real(r.metrics.recall) << ',' << format_real(r.metrics.dice) << ',' << r.steps << '\n';
  }
}

#define PMTK_INSTANTIATE_TRAIN(T)                                                                                   \
  template class Sgd<T>;                                                                                            \
  template model::LossTerms train_step(model::Model<T>&, Sgd<T>&, const data::Batch<T>&);                           \
  template model::LossTerms batch_loss(const model::Model<T>&, const data::Batch<T>&);                              \
  template SegMetrics evaluate(const model::Model<T>&, const std::vector<data::Sample>&, std::size_t);              \
  template std::vector<EpochLog> train_toy(model::Model<T>&, const std::vector<data::Sample>&,                      \
                                           const std::vector<data::Sample>&, const TrainConfig&,                    \
                                           const EpochCallback&);                                                   \
  template std::vector<AblationRow> ablate<T>(const model::ModelConfig&, const std::vector<model::Variant>&,        \
                                              const std::vector<data::Sample>&, const std::vector<data::Sample>&,   \
                                              const TrainConfig&);

PMTK_INSTANTIATE_TRAIN(float)
PMTK_INSTANTIATE_TRAIN(double)

}  // namespace pmtk::train
