#include "pmtk/bench.hpp"

#include <chrono>
#include <cmath>

#include "pmtk/rng.hpp"
#include "pmtk/ssm.hpp"

namespace pmtk::bench {
namespace {

using Clock = std::chrono::steady_clock;

struct Stats {
  double mean = 0.0, std = 0.0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(s.std / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

// Milliseconds per call, averaged over enough calls to fill a few ms.
template <typename F>
std::vector<double> time_calls(F&& f, std::size_t reps, std::size_t inner) {
  f();  // warm-up
  std::vector<double> out;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < inner; ++i) f();
    out.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / static_cast<double>(inner));
  }
  return out;
}

volatile double g_sink = 0.0;

}  // namespace

void ProbeConfig::validate() const {
  if (lengths.size() < 4) throw ConfigError("the probe needs at least four sequence lengths");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0) throw ConfigError("sequence lengths must be positive");
    if (i > 0 && lengths[i] <= lengths[i - 1]) throw ConfigError("sequence lengths must be ascending");
  }
  if (reps < 5) throw ConfigError("at least 5 repetitions are required");
  if (dim == 0 || state == 0) throw ConfigError("dim and state must be positive");
}

template <typename T>
std::vector<MixerTiming> scan_complexity_probe(const ProbeConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<MixerTiming> rows;
  const std::size_t longest = cfg.lengths.back();
  for (std::size_t len : cfg.lengths) {
    const Tensor<T> x = random_normal<T>({len, cfg.dim}, rng);
    const Tensor<T> delta = random_uniform<T>({len, cfg.dim}, rng, 0.01, 0.5);
    const Tensor<T> a = random_uniform<T>({cfg.dim, cfg.state}, rng, -2.0, -0.1);
    const Tensor<T> b = random_normal<T>({len, cfg.state}, rng);
    const Tensor<T> c = random_normal<T>({len, cfg.state}, rng);
    const Tensor<T> d = random_normal<T>({cfg.dim}, rng);
    const ssm::ScanInputs<T> in{x, delta, a, b, c, d, 1, false};
    const auto t = stats(time_calls([&] { g_sink = ssm::selective_scan_chunked(in)[0]; }, cfg.reps,
                                    std::max<std::size_t>(1, 4 * longest / len)));
    rows.push_back({len, "ssm", t.mean, t.std});
  }
  if (cfg.attention) {
    for (std::size_t len : cfg.lengths) {
      const Tensor<T> x = random_normal<T>({len, cfg.dim}, rng);
      const auto t = stats(time_calls([&] { g_sink = ssm::attention_reference(x)[0]; }, cfg.reps, 1));
      rows.push_back({len, "attention", t.mean, t.std});
    }
  }
  return rows;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("slope needs at least two paired points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw NumericError("log-log slope needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw NumericError("log-log slope needs distinct x values");
  return sxy / sxx;
}

double mixer_slope(const std::vector<MixerTiming>& rows, const std::string& mixer) {
  std::vector<double> x, y;
  for (const auto& r : rows) {
    if (r.mixer != mixer) continue;
    x.push_back(static_cast<double>(r.length));
    y.push_back(r.mean_ms);
  }
  return loglog_slope(x, y);
}

void write_timing_csv(std::ostream& os, const std::vector<MixerTiming>& rows) {
  os << "L,mixer,mean_ms,std_ms\n";
  for (const auto& r : rows) os << r.length << ',' << r.mixer << ',' << r.mean_ms << ',' << r.std_ms << '\n';
}

template <typename T>
ModelProfile profile_model(const model::ModelConfig& cfg, std::size_t batch, std::size_t reps, std::uint64_t seed) {
  if (batch == 0 || reps == 0) throw ConfigError("batch and reps must be positive");
  model::Model<T> m(cfg, seed);
  Rng rng(seed + 1);
  const Tensor<T> images = random_uniform<T>({batch, cfg.in_channels, cfg.image_size, cfg.image_size}, rng, 0.0, 1.0);
  ModelProfile p;
  p.params = m.param_count();
  p.batch = batch;
  p.image_size = cfg.image_size;
  {
    Tape<T> tape;
    const auto bound = m.bind(tape);
    model::forward(tape.constant(images), bound, cfg);
    p.peak_mem_mb = 2.0 * static_cast<double>(tape.value_bytes()) / (1024.0 * 1024.0);
  }
  const auto t = stats(time_calls(
      [&] {
        Tape<T> tape(false);
        const auto bound = m.bind(tape);
        g_sink = model::forward(tape.constant(images), bound, cfg).seg.value()[0];
      },
      reps, 1));
  p.forward_ms_mean = t.mean;
  p.forward_ms_std = t.std;
  return p;
}

void write_profile_table(std::ostream& os, const ModelProfile& p) {
  os << "params,batch,image_size,forward_ms_mean,forward_ms_std,peak_mem_mb\n";
  os << p.params << ',' << p.batch << ',' << p.image_size << ',' << p.forward_ms_mean << ',' << p.forward_ms_std << ','
     << p.peak_mem_mb << '\n';
}

#define PMTK_INSTANTIATE_BENCH(T)                                                      \
  template std::vector<MixerTiming> scan_complexity_probe<T>(const ProbeConfig&);      \
  template ModelProfile profile_model<T>(const model::ModelConfig&, std::size_t, std::size_t, std::uint64_t);

PMTK_INSTANTIATE_BENCH(float)
PMTK_INSTANTIATE_BENCH(double)

}  // namespace pmtk::bench
