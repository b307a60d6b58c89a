#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "pmtk/kernels.hpp"
#include "pmtk/metrics.hpp"
#include "pmtk/model.hpp"
#include "pmtk/rng.hpp"
#include "pmtk/ssm.hpp"
#include "pmtk/train.hpp"

using namespace pmtk;
namespace fs = std::filesystem;

namespace {

model::ModelConfig micro_config() {
  model::ModelConfig c;
  c.image_size = 32;
  c.head_width = 8;
  c.state_dim = 4;
  c.plan.widths = {4, 8, 16, 32};
  c.plan.pmd_blocks = {1, 1, 1, 1};
  c.plan.vim_blocks = 1;
  return c;
}

std::vector<data::Sample> micro_samples(std::size_t n, std::uint64_t seed) {
  data::SynthConfig sc;
  sc.seed = seed;
  sc.count = n;
  sc.size = 32;
  return data::synth_generate(sc);
}

template <typename T>
Tensor<T> random_images(std::size_t n, std::size_t s, std::uint64_t seed) {
  Rng rng(seed);
  return random_uniform<T>({n, 1, s, s}, rng, 0.0, 1.0);
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pmtk_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Model, StageShapesAt64) {
  model::ModelConfig cfg;
  model::Model<float> m(cfg, 1);
  Tape<float> tape(false);
  auto p = m.bind(tape);
  auto x = tape.constant(random_images<float>(2, 64, 3));
  auto out = model::forward(x, p, cfg);
  const Shape expect[4] = {{2, 16, 16, 16}, {2, 32, 8, 8}, {2, 64, 4, 4}, {2, 128, 2, 2}};
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(out.pmd[s].shape(), expect[s]);
    EXPECT_EQ(out.vim[s].shape(), expect[s]);
    EXPECT_EQ(out.fused[s].shape(), expect[s]);
  }
  for (auto* head : {&out.seg, &out.fcn, &out.aux_pmd, &out.aux_vim}) EXPECT_EQ(head->shape(), (Shape{2, 2, 64, 64}));
}

TEST(Model, ShapeContractAcrossSizes) {
  for (std::size_t size : {32, 96}) {
    auto cfg = micro_config();
    cfg.image_size = size;
    model::Model<float> m(cfg, 2);
    Tape<float> tape(false);
    auto out = model::forward(tape.constant(random_images<float>(1, size, 4)), m.bind(tape), cfg);
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t g = size / model::StagePlan::downsample(s);
      EXPECT_EQ(out.fused[s].shape(), (Shape{1, cfg.plan.widths[s], g, g}));
    }
    EXPECT_EQ(out.seg.shape(), (Shape{1, 2, size, size}));
  }
}

TEST(Model, RejectsBadExtents) {
  auto cfg = micro_config();
  model::Model<float> m(cfg, 1);
  Tape<float> tape(false);
  auto p = m.bind(tape);
  EXPECT_THROW(model::forward(tape.constant(random_images<float>(1, 48, 1)), p, cfg), DimensionError);
  EXPECT_THROW(model::forward(tape.constant(random_images<float>(1, 64, 1)), p, cfg), DimensionError);
}

TEST(Model, DeterministicInitAndForward) {
  auto cfg = micro_config();
  model::Model<float> a(cfg, 5), b(cfg, 5), c(cfg, 6);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), c.params());
  auto x = random_images<float>(2, 32, 1);
  EXPECT_EQ(model::predict(a, x), model::predict(b, x));
  Tape<float> t1(false), t2(false);
  EXPECT_EQ(model::forward(t1.constant(x), a.bind(t1), cfg).seg.value(),
            model::forward(t2.constant(x), b.bind(t2), cfg).seg.value());
}

TEST(Model, ConstantFieldIsDiffusionFixedPoint) {
  Tape<double> tape(false);
  Tensor<double> u({2, 16, 16, 16}, 0.37);
  auto v = pmd::diffuse_dwt(tape.constant(u), micro_config().diffusion).value();
  EXPECT_LE(max_abs_diff(v, u), 1e-12);
}

TEST(Model, ZeroOutProjectionsLeavePatchEmbedding) {
  auto cfg = micro_config();
  model::Model<double> m(cfg, 3);
  for (auto& [name, t] : m.params()) {
    if (name.rfind("vim.", 0) == 0 && name.find(".out_proj") != std::string::npos) t.fill(0.0);
  }
  Tape<double> tape(false);
  auto p = m.bind(tape);
  auto x = tape.constant(random_images<double>(2, 32, 2));
  auto vim = model::mamba_branch_forward(x, p, cfg);
  Var<double> map = x;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t patch = s == 0 ? 4 : 2;
    const std::size_t g = map.shape()[2] / patch;
    const std::string key = "vim.s" + std::to_string(s + 1);
    auto tok = ssm::patch_embed(map, {patch, map.shape()[1], cfg.plan.widths[s]}, p[key + ".embed"], p[key + ".pos"]);
    map = ssm::tokens_to_map(tok, 2, g, g);
    EXPECT_EQ(vim[s].value(), map.value()) << "stage " << s;
  }
}

TEST(Model, PositionEmbeddingsReceiveGradient) {
  auto cfg = micro_config();
  model::Model<float> m(cfg, 4);
  auto samples = micro_samples(2, 1);
  auto batch = data::make_batch<float>(samples, {0, 1});
  Tape<float> tape;
  auto p = m.bind(tape);
  auto out = model::forward(tape.constant(batch.images), p, cfg);
  tape.backward(model::total_loss(out, batch.labels, cfg.loss).total);
  for (std::size_t s = 1; s <= 4; ++s) {
    EXPECT_GT(sum_squares(tape.grad(p["vim.s" + std::to_string(s) + ".pos"])), 0.0) << "stage " << s;
  }
}

TEST(Model, FuseIdentityAndSymmetry) {
  Rng rng(5);
  Tape<double> tape(false);
  model::EncoderOutputs<double> a, b, z;
  for (std::size_t s = 0; s < 4; ++s) {
    const Shape sh{1, 2, 8u >> s, 8u >> s};
    a[s] = tape.constant(random_normal<double>(sh, rng));
    b[s] = tape.constant(random_normal<double>(sh, rng));
    z[s] = tape.constant(Tensor<double>(sh));
  }
  auto az = model::fuse(a, z), ab = model::fuse(a, b), ba = model::fuse(b, a);
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(az[s].value(), a[s].value());
    EXPECT_EQ(ab[s].value(), ba[s].value());
    EXPECT_EQ(ab[s].shape(), a[s].shape());
  }
  b[2] = tape.constant(Tensor<double>({1, 3, 2, 2}));
  EXPECT_THROW(model::fuse(a, b), DimensionError);
}

TEST(Model, ParamNamesAndCount) {
  model::Model<float> m(model::ModelConfig{}, 1);
  EXPECT_NO_THROW(m.param("pmd.stem1.w"));
  EXPECT_NO_THROW(m.param("vim.s4.b1.bwd.a_log"));
  EXPECT_NO_THROW(m.param("seg.cls.b"));
  EXPECT_THROW(m.param("nope"), Error);
  std::size_t n = 0;
  for (const auto& [name, t] : m.params()) n += t.size();
  EXPECT_EQ(m.param_count(), n);
}

TEST(Model, SaveLoadRoundTrip) {
  auto cfg = micro_config();
  cfg.variant = model::Variant::sobel;
  model::Model<float> m(cfg, 9);
  const auto dir = scratch("ckpt");
  m.save(dir);
  auto back = model::Model<float>::load(dir);
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(back.config().variant, model::Variant::sobel);
  EXPECT_EQ(back.config().plan.widths, cfg.plan.widths);
  fs::remove_all(dir);
}

TEST(Model, ConfigRoundTrip) {
  auto cfg = micro_config();
  cfg.diffusion.k = 0.3;
  cfg.loss.fcn = 0.25;
  KeyValues kv;
  cfg.write(kv);
  auto back = model::ModelConfig::read(KeyValues::parse(kv.dump()));
  EXPECT_EQ(back.diffusion.k, 0.3);
  EXPECT_EQ(back.loss.fcn, 0.25);
  EXPECT_EQ(back.plan.pmd_blocks, cfg.plan.pmd_blocks);
  EXPECT_THROW(model::parse_variant("both"), ConfigError);
}

TEST(Loss, AuxWeightsZeroGivesPrimaryOnly) {
  auto cfg = micro_config();
  cfg.loss = {1.0, 0.0, 0.0, 0.0};
  model::Model<double> m(cfg, 2);
  auto samples = micro_samples(2, 3);
  auto batch = data::make_batch<double>(samples, {0, 1});
  Tape<double> tape(false);
  auto out = model::forward(tape.constant(batch.images), m.bind(tape), cfg);
  auto loss = model::total_loss(out, batch.labels, cfg.loss);
  EXPECT_EQ(loss.terms.total, loss.terms.prim);
  EXPECT_NEAR(loss.terms.prim, kernels::softmax_cross_entropy(out.seg.value(), batch.labels), 1e-12);
}

TEST(Loss, DecompositionSumsToTotal) {
  auto cfg = micro_config();
  model::Model<float> m(cfg, 2);
  auto samples = micro_samples(2, 3);
  auto batch = data::make_batch<float>(samples, {0, 1});
  Tape<float> tape(false);
  auto out = model::forward(tape.constant(batch.images), m.bind(tape), cfg);
  auto t = model::total_loss(out, batch.labels, cfg.loss).terms;
  EXPECT_NEAR(t.prim + 0.4 * (t.fcn + t.pmd + t.vim), t.total, 1e-6);
}

TEST(Loss, PerfectLogits) {
  Tape<double> tape(false);
  std::vector<int> labels{0, 1, 1, 0, 1, 0, 0, 1};
  Tensor<double> logits({2, 2, 2, 2});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i) logits[(n * 2 + labels[n * 4 + i]) * 4 + i] = 40.0;
  model::Outputs<double> out;
  out.seg = out.fcn = out.aux_pmd = out.aux_vim = tape.constant(logits);
  EXPECT_LE(model::total_loss(out, labels, model::LossWeights{}).terms.total, 1e-6);
}

TEST(Metrics, Examples) {
  std::vector<int> a{1, 1, 0, 0}, b{0, 0, 1, 1}, z{0, 0, 0, 0};
  auto same = binary_metrics(a, a);
  EXPECT_EQ(same.precision, 1.0);
  EXPECT_EQ(same.recall, 1.0);
  EXPECT_EQ(same.dice, 1.0);
  auto dis = binary_metrics(a, b);
  EXPECT_EQ(dis.precision, 0.0);
  EXPECT_EQ(dis.recall, 0.0);
  EXPECT_EQ(dis.dice, 0.0);
  std::vector<int> truth{1, 1, 0, 0, 0, 0}, pred{1, 1, 1, 1, 0, 0};
  auto over = binary_metrics(pred, truth);
  EXPECT_DOUBLE_EQ(over.precision, 0.5);
  EXPECT_DOUBLE_EQ(over.recall, 1.0);
  EXPECT_DOUBLE_EQ(over.dice, 2.0 / 3.0);
}

TEST(Metrics, EmptyConventions) {
  std::vector<int> z{0, 0, 0}, one{0, 1, 0};
  auto both = binary_metrics(z, z);
  EXPECT_EQ(both.dice, 1.0);
  EXPECT_EQ(both.precision, 1.0);
  EXPECT_EQ(binary_metrics(z, one).dice, 0.0);
  EXPECT_EQ(binary_metrics(one, z).dice, 0.0);
  EXPECT_THROW(binary_metrics(z, std::vector<int>{0, 1}), DimensionError);
}

TEST(Metrics, DiceIsHarmonicMean) {
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> p(40), t(40);
    for (auto& v : p) v = rng.uniform() < 0.4;
    for (auto& v : t) v = rng.uniform() < 0.4;
    auto m = binary_metrics(p, t);
    if (m.precision + m.recall > 0) {
      EXPECT_NEAR(m.dice, 2 * m.precision * m.recall / (m.precision + m.recall), 1e-12);
    }
  }
}

TEST(Train, OneEpochSmoke) {
  auto cfg = micro_config();
  model::Model<float> m(cfg, 1);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 1;
  auto logs = train::train_toy(m, micro_samples(8, 2), {}, tc);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_TRUE(std::isfinite(logs[0].loss.total));
  EXPECT_EQ(logs[0].steps, 1u);
  EXPECT_GE(logs[0].val.dice, 0.0);
  EXPECT_LE(logs[0].val.dice, 1.0);
}

TEST(Train, EmptyTrainingSetThrows) {
  model::Model<float> m(micro_config(), 1);
  EXPECT_THROW(train::train_toy(m, {}, {}, train::TrainConfig{}), DataError);
}

TEST(Train, FixedBatchLossDecreases) {
  auto cfg = micro_config();
  model::Model<float> m(cfg, 3);
  auto samples = micro_samples(4, 5);
  auto batch = data::make_batch<float>(samples, {0, 1, 2, 3});
  train::Sgd<float> opt(1e-4, 0.9);
  const double first = train::train_step(m, opt, batch).total;
  for (int i = 1; i < 50; ++i) train::train_step(m, opt, batch);
  EXPECT_LT(train::batch_loss(m, batch).total, first);
}

TEST(Train, SameSeedSameFirstEpoch) {
  auto cfg = micro_config();
  auto samples = micro_samples(8, 4);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 4;
  tc.seed = 11;
  model::Model<float> a(cfg, tc.seed), b(cfg, tc.seed);
  auto la = train::train_toy(a, samples, {}, tc), lb = train::train_toy(b, samples, {}, tc);
  EXPECT_NEAR(la[0].loss.total, lb[0].loss.total, 1e-6);
  EXPECT_EQ(a.params(), b.params());
}

TEST(Train, SgdUpdateRule) {
  io::NamedTensors<double> p{{"w", Tensor<double>({2}, {1.0, 2.0})}};
  train::Sgd<double> opt(0.1, 0.5);
  opt.step(p, {Tensor<double>({2}, {1.0, -1.0})});
  EXPECT_DOUBLE_EQ(p[0].second[0], 0.9);
  opt.step(p, {Tensor<double>({2}, {1.0, -1.0})});
  EXPECT_DOUBLE_EQ(p[0].second[0], 0.9 - 0.1 * 1.5);
  EXPECT_DOUBLE_EQ(p[0].second[1], 2.1 + 0.1 * 1.5);
}

TEST(Train, LogFormat) {
  std::ostringstream os;
  train::EpochLog e;
  e.epoch = 3;
  e.loss = {0.5, 0.25, 0.125, 1.0, 0.0};
  e.val = {0.75, 0.5, 0.6};
  train::write_log_row(os, e);
  EXPECT_EQ(os.str(), "3,0.5,0.25,0.125,1,0.75,0.5,0.6\n");
  EXPECT_EQ(std::string(train::kLogHeader), "epoch,loss_prim,loss_fcn,loss_pmd,loss_vim,val_precision,val_recall,val_dice");
}

TEST(Ablate, OneRowPerVariantSameSteps) {
  auto cfg = micro_config();
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 4;
  auto samples = micro_samples(6, 8);
  std::vector<data::Sample> tr(samples.begin(), samples.begin() + 4), ev(samples.begin() + 4, samples.end());
  auto rows = train::ablate<float>(cfg, {model::Variant::full, model::Variant::no_pmd, model::Variant::sobel}, tr, ev, tc);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].steps, rows[1].steps);
  EXPECT_EQ(rows[0].steps, rows[2].steps);
  std::ostringstream os;
  train::write_ablation_table(os, rows);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "variant,precision,recall,dice,steps");
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  EXPECT_EQ(n, 3u);
}
