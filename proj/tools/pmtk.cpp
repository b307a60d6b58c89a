// pmtk: batch front end. Exit status 0 on success, 1 on a runtime failure,
// 2 on a usage error.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "pmtk/bench.hpp"
#include "pmtk/config.hpp"
#include "pmtk/data.hpp"
#include "pmtk/gradcheck.hpp"
#include "pmtk/pmd.hpp"
#include "pmtk/train.hpp"
#include "pmtk/wavelet.hpp"

namespace fs = std::filesystem;
using namespace pmtk;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::ofstream open_csv(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << std::setprecision(10);
  return os;
}

void write_run_config(KeyValues kv, const std::string& command, const fs::path& path) {
  KeyValues out;
  out.set("command", command);
  out.set("precision", precision_name(precision_from_env()));
  for (const auto& [k, v] : kv.entries()) out.set(k, v);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out.save(path);
}

fs::path sibling_config(const fs::path& file) {
  fs::path p = file;
  p.replace_extension(".run.cfg");
  return p;
}

// ---- denoise --------------------------------------------------------------

struct DenoiseArgs {
  std::string in, out, csv, mode = "dwt-attenuate";
  int steps = 10;
  double k = 1.0, dt = 0.2;

  KeyValues kv() const {
    KeyValues c;
    c.set("in", in);
    c.set("out", out);
    c.set("csv", csv);
    c.set("mode", mode);
    c.set("steps", static_cast<std::uint64_t>(steps));
    c.set("k", k);
    c.set("dt", dt);
    return c;
  }
};

template <typename T>
int run_denoise(DenoiseArgs a) {
  if (a.steps < 0) throw UsageError("--steps must be non-negative");
  if (a.csv.empty()) a.csv = fs::path(a.out).replace_extension(".steps.csv").string();
  const Tensor<double> image = data::load_image(a.in);
  const data::Padded padded = data::pad_to_multiple(image, 2);
  pmd::DiffusionConfig cfg{a.k, 1, a.dt, pmd::DwtMode::attenuate};
  const bool fd = a.mode == "fd";
  if (!fd) cfg.mode = pmd::parse_dwt_mode(a.mode.substr(4));
  if (fd) {
    cfg.validate_fd();
  } else {
    cfg.validate_dwt();
  }
  pmd::QualityProbe probe(padded.image);
  Tensor<T> u = padded.image.cast<T>();
  std::ofstream csv = open_csv(a.csv);
  csv << "step,flat_variance,edge_contrast\n";
  auto log = [&](int step) {
    const Tensor<double> ud = u.template cast<double>();
    csv << step << ',' << probe.flat_variance(ud) << ',' << probe.edge_contrast(ud) << '\n';
  };
  log(0);
  for (int s = 1; s <= a.steps; ++s) {
    u = fd ? pmd::pmd_step_fd(u, cfg) : pmd::pmd_step_dwt(u, cfg);
    log(s);
  }
  data::save_image(a.out, data::crop(u.template cast<double>(), padded.height, padded.width));
  write_run_config(a.kv(), "denoise", sibling_config(a.out));
  return 0;
}

// ---- dwt ------------------------------------------------------------------

struct DwtArgs {
  std::string in, out_dir;
  KeyValues kv() const {
    KeyValues c;
    c.set("in", in);
    c.set("out-dir", out_dir);
    return c;
  }
};

template <typename T>
int run_dwt(const DwtArgs& a) {
  const Tensor<double> image = data::load_image(a.in);
  if (image.dim(1) % 2 != 0 || image.dim(2) % 2 != 0) {
    throw DimensionError("dwt needs even image extents, got " + shape_str(image.shape()));
  }
  const wavelet::SubbandSet<T> sb = wavelet::dwt2(image.cast<T>());
  fs::create_directories(a.out_dir);
  // display scaling: LL spans [0, 2], details [-1, 1]
  auto show = [](const Tensor<T>& t, double gain, double offset) {
    Tensor<double> d = t.template cast<double>();
    for (auto& v : d.data()) v = offset + gain * v;
    return d;
  };
  const fs::path dir(a.out_dir);
  data::save_image(dir / "ll.pgm", show(sb.ll, 0.5, 0.0));
  data::save_image(dir / "lh.pgm", show(sb.lh, 0.5, 0.5));
  data::save_image(dir / "hl.pgm", show(sb.hl, 0.5, 0.5));
  data::save_image(dir / "hh.pgm", show(sb.hh, 0.5, 0.5));
  io::save_checkpoint<T>(dir / "subbands", {{"ll", sb.ll}, {"lh", sb.lh}, {"hl", sb.hl}, {"hh", sb.hh}});
  write_run_config(a.kv(), "dwt", dir / "run.cfg");
  return 0;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  data::SynthConfig cfg;
  std::string out;
  std::uint64_t split_seed = 0;
  bool split_seed_set = false;

  KeyValues kv() const {
    KeyValues c;
    c.set("out", out);
    c.set("count", cfg.count);
    c.set("seed", cfg.seed);
    c.set("size", cfg.size);
    c.set("noise", cfg.noise_sigma);
    c.set("shadow", cfg.shadow_prob);
    c.set("deform", cfg.deform);
    return c;
  }
};

int run_synth(const SynthArgs& a) {
  data::Dataset ds;
  ds.samples = data::synth_generate(a.cfg);
  ds.splits.assign(ds.samples.size(), data::Split::train);
  const auto parts = data::split(ds.samples.size(), {0.8, 0.1, 0.1}, a.cfg.seed);
  for (std::size_t i : parts.val) ds.splits[i] = data::Split::val;
  for (std::size_t i : parts.test) ds.splits[i] = data::Split::test;
  data::write_dataset(a.out, ds);
  write_run_config(a.kv(), "synth", fs::path(a.out) / "run.cfg");
  std::cout << "wrote " << ds.samples.size() << " samples (" << parts.train.size() << " train, " << parts.val.size()
            << " val, " << parts.test.size() << " test) to " << a.out << "\n";
  return 0;
}

// ---- train / eval / ablate ------------------------------------------------

// Pads every sample up to a multiple of 32 and checks they share one size.
std::vector<data::Sample> prepare(std::vector<data::Sample> samples) {
  for (auto& s : samples) {
    if (s.height() % 32 == 0 && s.width() % 32 == 0) continue;
    const std::size_t h = s.height(), w = s.width();
    s.image = data::pad_to_multiple(s.image, 32).image;
    s.mask = data::pad_mask(s.mask, h, w, 32);
  }
  for (const auto& s : samples) {
    if (s.height() != samples.front().height() || s.width() != samples.front().width()) {
      throw DataError("dataset images differ in size after padding");
    }
    if (s.height() != s.width()) throw DataError("the model expects square images");
  }
  return samples;
}

struct ModelArgs {
  std::string variant = "full";
  double pmd_k = 1.0;
  int pmd_steps = 1;
  std::string pmd_mode = "attenuate";
  std::vector<std::size_t> widths{16, 32, 64, 128};

  model::ModelConfig config(std::size_t image_size) const {
    model::ModelConfig c;
    c.image_size = image_size;
    c.variant = model::parse_variant(variant);
    c.diffusion.k = pmd_k;
    c.diffusion.steps = pmd_steps;
    c.diffusion.mode = pmd::parse_dwt_mode(pmd_mode);
    if (widths.size() != model::kStages) throw UsageError("--widths needs exactly four values");
    for (std::size_t i = 0; i < model::kStages; ++i) c.plan.widths[i] = widths[i];
    c.validate();
    return c;
  }

  void write(KeyValues& kv) const {
    kv.set("variant", variant);
    kv.set("pmd-k", pmd_k);
    kv.set("pmd-steps", static_cast<std::uint64_t>(pmd_steps));
    kv.set("pmd-mode", pmd_mode);
    std::string w;
    for (std::size_t i = 0; i < widths.size(); ++i) w += (i ? "," : "") + std::to_string(widths[i]);
    kv.set("widths", w);
  }
};

struct TrainArgs {
  std::string data, out = "run";
  train::TrainConfig cfg;
  ModelArgs model;

  KeyValues kv() const {
    KeyValues c;
    c.set("data", data);
    c.set("out", out);
    c.set("epochs", cfg.epochs);
    c.set("batch", cfg.batch);
    c.set("lr", cfg.lr);
    c.set("momentum", cfg.momentum);
    c.set("seed", cfg.seed);
    model.write(c);
    return c;
  }
};

template <typename T>
int run_train(const TrainArgs& a) {
  const data::Dataset ds = data::read_dataset(a.data);
  const auto train_set = prepare(ds.subset(data::Split::train));
  const auto val_set = prepare(ds.subset(data::Split::val));
  if (train_set.empty()) throw DataError("dataset has no training samples");
  model::Model<T> m(a.model.config(train_set.front().height()), a.cfg.seed);
  fs::create_directories(a.out);
  std::ofstream log = open_csv(fs::path(a.out) / "log.csv");
  log << train::kLogHeader << '\n';
  train::train_toy(m, train_set, val_set, a.cfg, [&](const train::EpochLog& e) {
    train::write_log_row(log, e);
    log.flush();
    std::cout << "epoch " << e.epoch << " loss " << e.loss.total << " val_dice " << e.val.dice << std::endl;
  });
  m.save(a.out);
  write_run_config(a.kv(), "train", fs::path(a.out) / "run.cfg");
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, split = "val", out;
  std::size_t batch = 8;

  KeyValues kv() const {
    KeyValues c;
    c.set("data", data);
    c.set("ckpt", ckpt);
    c.set("split", split);
    c.set("out", out);
    c.set("batch", batch);
    return c;
  }
};

template <typename T>
int run_eval(EvalArgs a) {
  if (a.out.empty()) a.out = (fs::path(a.ckpt) / ("eval_" + a.split + ".csv")).string();
  const model::Model<T> m = model::Model<T>::load(a.ckpt);
  const data::Dataset ds = data::read_dataset(a.data);
  const auto samples = prepare(ds.subset(data::parse_split(a.split)));
  if (samples.empty()) throw DataError("split '" + a.split + "' is empty");
  if (samples.front().height() != m.config().image_size) throw DataError("dataset size does not match the checkpoint");
  std::ofstream csv = open_csv(a.out);
  csv << "id,precision,recall,dice\n";
  // per-image rows, computed with the same chunking as the summary
  MetricMean mean;
  const std::size_t n = samples.size(), chunks = (n + a.batch - 1) / a.batch;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = n / chunks + (c < n % chunks ? 1 : 0);
    std::vector<std::size_t> idx(len);
    for (std::size_t i = 0; i < len; ++i) idx[i] = pos + i;
    const auto batch = data::make_batch<T>(samples, idx);
    const auto pred = model::predict(m, batch.images);
    const std::size_t px = pred.size() / len;
    for (std::size_t i = 0; i < len; ++i) {
      const SegMetrics s = binary_metrics(std::span<const int>(pred).subspan(i * px, px),
                                          std::span<const int>(batch.labels).subspan(i * px, px));
      mean.add(s);
      csv << samples[pos + i].id << ',' << s.precision << ',' << s.recall << ',' << s.dice << '\n';
    }
    pos += len;
  }
  const SegMetrics r = mean.mean();
  csv << "mean," << r.precision << ',' << r.recall << ',' << r.dice << '\n';
  std::cout << "precision=" << r.precision << " recall=" << r.recall << " dice=" << r.dice << "\n";
  write_run_config(a.kv(), "eval", sibling_config(a.out));
  return 0;
}

struct AblateArgs {
  TrainArgs train;
  std::vector<std::string> variants{"full", "no-pmd", "sobel"};
  std::string split = "test";
};

template <typename T>
int run_ablate(const AblateArgs& a) {
  const data::Dataset ds = data::read_dataset(a.train.data);
  const auto train_set = prepare(ds.subset(data::Split::train));
  const auto eval_set = prepare(ds.subset(data::parse_split(a.split)));
  if (train_set.empty() || eval_set.empty()) throw DataError("ablation needs non-empty train and evaluation splits");
  std::vector<model::Variant> variants;
  for (const auto& v : a.variants) variants.push_back(model::parse_variant(v));
  const auto rows = train::ablate<T>(a.train.model.config(train_set.front().height()), variants, train_set, eval_set,
                                     a.train.cfg);
  fs::create_directories(a.train.out);
  std::ofstream csv = open_csv(fs::path(a.train.out) / "ablation.csv");
  train::write_ablation_table(csv, rows);
  train::write_ablation_table(std::cout, rows);
  KeyValues kv = a.train.kv();
  std::string vs;
  for (std::size_t i = 0; i < a.variants.size(); ++i) vs += (i ? "," : "") + a.variants[i];
  kv.set("variants", vs);
  kv.set("split", a.split);
  write_run_config(kv, "ablate", fs::path(a.train.out) / "run.cfg");
  return 0;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  std::string out = "bench";
  bench::ProbeConfig probe;
  std::size_t model_batch = 8, model_reps = 5, image_size = 64;

  KeyValues kv() const {
    KeyValues c;
    c.set("out", out);
    std::string ls;
    for (std::size_t i = 0; i < probe.lengths.size(); ++i) ls += (i ? "," : "") + std::to_string(probe.lengths[i]);
    c.set("lengths", ls);
    c.set("dim", probe.dim);
    c.set("state", probe.state);
    c.set("reps", probe.reps);
    c.set("seed", probe.seed);
    c.set("model-batch", model_batch);
    c.set("model-reps", model_reps);
    c.set("image-size", image_size);
    return c;
  }
};

template <typename T>
int run_bench(const BenchArgs& a) {
  const auto rows = bench::scan_complexity_probe<T>(a.probe);
  fs::create_directories(a.out);
  std::ofstream scan = open_csv(fs::path(a.out) / "scan.csv");
  bench::write_timing_csv(scan, rows);
  model::ModelConfig mc;
  mc.image_size = a.image_size;
  const auto prof = bench::profile_model<T>(mc, a.model_batch, a.model_reps, a.probe.seed);
  std::ofstream table = open_csv(fs::path(a.out) / "model.csv");
  bench::write_profile_table(table, prof);
  std::cout << "ssm slope " << bench::mixer_slope(rows, "ssm");
  if (a.probe.attention) std::cout << ", attention slope " << bench::mixer_slope(rows, "attention");
  std::cout << "\nparams " << prof.params << ", forward " << prof.forward_ms_mean << " ms\n";
  write_run_config(a.kv(), "bench", fs::path(a.out) / "run.cfg");
  return 0;
}

// ---- gradcheck ------------------------------------------------------------

struct GradArgs {
  gradcheck::SuiteOptions opt;
  std::string out;

  KeyValues kv() const {
    KeyValues c;
    c.set("seed", opt.seed);
    c.set("fast", opt.fast);
    c.set("out", out);
    return c;
  }
};

template <typename T>
int run_gradcheck(const GradArgs& a) {
  const auto rows = gradcheck::run_suite<T>(a.opt);
  bool ok = true;
  std::ostringstream table;
  table << "family,max_rel_err,checks,coords,skipped,pass\n";
  for (const auto& r : rows) {
    table << r.family << ',' << r.max_rel_err << ',' << r.checks << ',' << r.coords << ',' << r.skipped << ','
          << (r.pass ? 1 : 0) << '\n';
    ok = ok && r.pass;
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    std::ofstream csv = open_csv(a.out);
    csv << table.str();
    write_run_config(a.kv(), "gradcheck", sibling_config(a.out));
  }
  std::cout << (ok ? "all families within " : "FAILED: tolerance ") << gradcheck::tolerance<T>() << "\n";
  return ok ? 0 : kExitRuntime;
}

template <typename F>
int with_precision(F&& f) {
  return precision_from_env() == Precision::f64 ? f(double{}) : f(float{});
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of integers, got '" + s + "'");
    }
  }
  return out;
}

int dispatch(int argc, char** argv);

// Re-runs the command recorded in a run.cfg file.
int replay(const std::string& path) {
  const KeyValues kv = KeyValues::load(path);
  std::vector<std::string> args{"pmtk", kv.str("command")};
  for (const auto& [k, v] : kv.entries()) {
    if (k == "command" || k == "precision") continue;
    if (v == "true") {
      args.push_back("--" + k);
    } else if (v == "false" || v.empty()) {
      continue;
    } else {
      args.push_back("--" + k);
      args.push_back(v);
    }
  }
  setenv("PMTK_PRECISION", kv.str("precision", "f32").c_str(), 1);
  std::vector<char*> cargv;
  for (auto& s : args) cargv.push_back(s.data());
  return dispatch(static_cast<int>(cargv.size()), cargv.data());
}

int dispatch(int argc, char** argv) {
  CLI::App app{"P-Mamba toolkit: wavelet diffusion, selective scans and a dual-branch segmenter"};
  app.require_subcommand(1);

  DenoiseArgs dn;
  auto* c_dn = app.add_subcommand("denoise", "Perona-Malik denoising of a PGM image");
  c_dn->add_option("--in", dn.in, "input image (binary PGM)")->required();
  c_dn->add_option("--out", dn.out, "output image")->required();
  c_dn->add_option("--csv", dn.csv, "per-step quality CSV (default: <out>.steps.csv)");
  c_dn->add_option("--mode", dn.mode, "fd, dwt-attenuate or dwt-as-written")
      ->check(CLI::IsMember({"fd", "dwt-attenuate", "dwt-as-written"}));
  c_dn->add_option("--steps", dn.steps, "iterations")->check(CLI::NonNegativeNumber);
  c_dn->add_option("--k", dn.k, "contrast constant")->check(CLI::PositiveNumber);
  c_dn->add_option("--dt", dn.dt, "finite-difference step size (fd mode)");

  DwtArgs dw;
  auto* c_dw = app.add_subcommand("dwt", "single-level Haar subbands of a PGM image");
  c_dw->add_option("--in", dw.in, "input image")->required();
  c_dw->add_option("--out-dir", dw.out_dir, "directory for ll/lh/hl/hh.pgm")->required();

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "generate a synthetic echo-like dataset");
  c_sy->add_option("--out", sy.out, "dataset directory")->required();
  c_sy->add_option("--count", sy.cfg.count, "number of samples")->check(CLI::PositiveNumber);
  c_sy->add_option("--seed", sy.cfg.seed, "generator and split seed");
  c_sy->add_option("--size", sy.cfg.size, "image side length");
  c_sy->add_option("--noise", sy.cfg.noise_sigma, "speckle strength");
  c_sy->add_option("--shadow", sy.cfg.shadow_prob, "shadow wedge probability");
  c_sy->add_option("--deform", sy.cfg.deform, "boundary deformation amplitude");

  auto add_model_opts = [](CLI::App* c, ModelArgs& m, std::string& widths) {
    c->add_option("--variant", m.variant, "full, no-pmd or sobel")
        ->check(CLI::IsMember({"full", "no-pmd", "sobel"}));
    c->add_option("--pmd-k", m.pmd_k, "diffusion contrast constant")->check(CLI::PositiveNumber);
    c->add_option("--pmd-steps", m.pmd_steps, "diffusion steps per block")->check(CLI::NonNegativeNumber);
    c->add_option("--pmd-mode", m.pmd_mode, "attenuate or as-written")
        ->check(CLI::IsMember({"attenuate", "as-written"}));
    c->add_option("--widths", widths, "four stage widths, comma separated");
  };
  auto add_train_opts = [](CLI::App* c, TrainArgs& t) {
    c->add_option("--data", t.data, "dataset directory")->required();
    c->add_option("--out", t.out, "output directory");
    c->add_option("--epochs", t.cfg.epochs, "epochs")->check(CLI::PositiveNumber);
    c->add_option("--batch", t.cfg.batch, "batch size")->check(CLI::PositiveNumber);
    c->add_option("--lr", t.cfg.lr, "learning rate")->check(CLI::PositiveNumber);
    c->add_option("--momentum", t.cfg.momentum, "momentum");
    c->add_option("--seed", t.cfg.seed, "initialization and shuffling seed");
  };

  TrainArgs tr;
  std::string tr_widths;
  auto* c_tr = app.add_subcommand("train", "train the segmenter on a dataset directory");
  add_train_opts(c_tr, tr);
  add_model_opts(c_tr, tr.model, tr_widths);

  AblateArgs ab;
  std::string ab_widths, ab_variants;
  auto* c_ab = app.add_subcommand("ablate", "train each variant with one budget and compare");
  add_train_opts(c_ab, ab.train);
  add_model_opts(c_ab, ab.train.model, ab_widths);
  c_ab->add_option("--variants", ab_variants, "comma-separated variants (default full,no-pmd,sobel)");
  c_ab->add_option("--split", ab.split, "evaluation split")->check(CLI::IsMember({"train", "val", "test"}));

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  c_ev->add_option("--data", ev.data, "dataset directory")->required();
  c_ev->add_option("--ckpt", ev.ckpt, "checkpoint directory")->required();
  c_ev->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  c_ev->add_option("--out", ev.out, "metrics CSV (default: <ckpt>/eval_<split>.csv)");
  c_ev->add_option("--batch", ev.batch, "evaluation chunk size")->check(CLI::PositiveNumber);

  BenchArgs be;
  std::string be_lengths;
  auto* c_be = app.add_subcommand("bench", "scan scaling and model timing");
  c_be->add_option("--out", be.out, "output directory");
  c_be->add_option("--lengths", be_lengths, "ascending sequence lengths, comma separated");
  c_be->add_option("--dim", be.probe.dim, "channels");
  c_be->add_option("--state", be.probe.state, "state size");
  c_be->add_option("--reps", be.probe.reps, "repetitions (>= 5)");
  c_be->add_option("--seed", be.probe.seed, "seed");
  c_be->add_option("--model-batch", be.model_batch, "batch for the model timing");
  c_be->add_option("--model-reps", be.model_reps, "repetitions for the model timing");
  c_be->add_option("--image-size", be.image_size, "input side length for the model timing");

  GradArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  c_gc->add_option("--seed", gc.opt.seed, "seed");
  c_gc->add_flag("--fast", gc.opt.fast, "skip the full-model check");
  c_gc->add_option("--out", gc.out, "CSV report");

  std::string replay_path;
  auto* c_rp = app.add_subcommand("replay", "re-run the command recorded in a run.cfg");
  c_rp->add_option("config", replay_path, "run.cfg file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  if (!tr_widths.empty()) tr.model.widths = parse_list(tr_widths);
  if (!ab_widths.empty()) ab.train.model.widths = parse_list(ab_widths);
  if (!ab_variants.empty()) {
    ab.variants.clear();
    std::stringstream ss(ab_variants);
    std::string v;
    while (std::getline(ss, v, ',')) ab.variants.push_back(v);
  }
  if (!be_lengths.empty()) be.probe.lengths = parse_list(be_lengths);

  auto typed = [](auto fn) { return with_precision(fn); };
  if (*c_dn) return typed([&](auto t) { return run_denoise<decltype(t)>(dn); });
  if (*c_dw) return typed([&](auto t) { return run_dwt<decltype(t)>(dw); });
  if (*c_sy) return run_synth(sy);
  if (*c_tr) return typed([&](auto t) { return run_train<decltype(t)>(tr); });
  if (*c_ab) return typed([&](auto t) { return run_ablate<decltype(t)>(ab); });
  if (*c_ev) return typed([&](auto t) { return run_eval<decltype(t)>(ev); });
  if (*c_be) return typed([&](auto t) { return run_bench<decltype(t)>(be); });
  if (*c_gc) return typed([&](auto t) { return run_gradcheck<decltype(t)>(gc); });
  if (*c_rp) return replay(replay_path);
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
