#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pmtk/config.hpp"
#include "pmtk/data.hpp"
#include "pmtk/rng.hpp"
#include "pmtk/tensor_io.hpp"

using namespace pmtk;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pmtk_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_raw(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

}  // namespace

TEST(Pgm, RoundTripWithinQuantization) {
  const auto dir = scratch("pgm");
  Rng rng(1);
  auto img = random_uniform<double>({1, 13, 7}, rng, 0.0, 1.0);
  data::save_image(dir / "a.pgm", img);
  auto back = data::load_image(dir / "a.pgm");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LE(max_abs_diff(back, img), 1.0 / 255.0);
  // a second round trip is exact
  data::save_image(dir / "b.pgm", back);
  EXPECT_EQ(data::load_image(dir / "b.pgm"), back);
  fs::remove_all(dir);
}

TEST(Pgm, FormatErrors) {
  const auto dir = scratch("pgmbad");
  write_raw(dir / "trunc.pgm", std::string("P5\n4 4\n255\n") + std::string(10, 'x'));
  EXPECT_THROW(data::load_image(dir / "trunc.pgm"), FormatError);
  write_raw(dir / "wide.pgm", std::string("P5\n2 2\n65535\n") + std::string(8, '\0'));
  EXPECT_THROW(data::load_image(dir / "wide.pgm"), FormatError);
  write_raw(dir / "ascii.pgm", "P2\n2 2\n255\n0 1 2 3\n");
  EXPECT_THROW(data::load_image(dir / "ascii.pgm"), FormatError);
  write_raw(dir / "ok.pgm", std::string("P5\n# comment\n2 1\n255\n") + std::string("\x00\xff", 2));
  auto ok = data::load_image(dir / "ok.pgm");
  EXPECT_EQ(ok.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(ok[1], 1.0);
  EXPECT_THROW(data::load_image(dir / "missing.pgm"), Error);
  fs::remove_all(dir);
}

TEST(Pgm, MaskThreshold) {
  const auto dir = scratch("mask");
  std::vector<int> m{0, 1, 1, 0, 1, 0};
  data::save_mask(dir / "m.pgm", m, 2, 3);
  std::size_t h = 0, w = 0;
  EXPECT_EQ(data::load_mask(dir / "m.pgm", &h, &w), m);
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(w, 3u);
  fs::remove_all(dir);
}

TEST(Padding, AlreadyAligned) {
  Rng rng(2);
  auto x = random_uniform<double>({1, 64, 64}, rng);
  auto p = data::pad_to_multiple(x, 32);
  EXPECT_EQ(p.image, x);
  EXPECT_EQ(p.height, 64u);
}

TEST(Padding, PadAndCrop) {
  Rng rng(3);
  auto x = random_uniform<double>({1, 60, 50}, rng);
  auto p = data::pad_to_multiple(x, 32);
  EXPECT_EQ(p.image.shape(), (Shape{1, 64, 64}));
  EXPECT_EQ(p.height, 60u);
  EXPECT_EQ(p.width, 50u);
  EXPECT_EQ(data::crop(p.image, p.height, p.width), x);
  // mirror without repeating the edge
  EXPECT_EQ(p.image(0, 60, 0), x(0, 58, 0));
  EXPECT_EQ(p.image(0, 0, 50), x(0, 0, 48));
}

TEST(Padding, ConstantStaysConstant) {
  auto p = data::pad_to_multiple(Tensor<double>({1, 5, 3}, 0.4), 8);
  for (double v : p.image.data()) EXPECT_EQ(v, 0.4);
  auto m = data::pad_mask(std::vector<int>(15, 1), 5, 3, 8);
  EXPECT_EQ(m.size(), 64u);
}

TEST(Synth, Deterministic) {
  data::SynthConfig cfg;
  cfg.seed = 7;
  cfg.count = 4;
  auto a = data::synth_generate(cfg), b = data::synth_generate(cfg);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
  }
  cfg.seed = 8;
  EXPECT_NE(data::synth_generate(cfg)[0].image, a[0].image);
}

TEST(Synth, NoiseOffIsPiecewiseSmooth) {
  data::SynthConfig cfg;
  cfg.count = 10;
  cfg.noise_sigma = 0.0;
  cfg.shadow_prob = 0.0;
  for (const auto& s : data::synth_generate(cfg)) {
    for (int region : {0, 1}) {
      double sum = 0, sum2 = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < s.mask.size(); ++i) {
        if (s.mask[i] != region) continue;
        sum += s.image[i];
        sum2 += s.image[i] * s.image[i];
        ++n;
      }
      ASSERT_GT(n, 0u);
      EXPECT_LE(sum2 / n - (sum / n) * (sum / n), 1e-3);
    }
  }
}

TEST(Synth, MaskAreaFraction) {
  data::SynthConfig cfg;
  cfg.count = 1;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    cfg.seed = seed;
    const auto s = data::synth_sample(cfg, 0);
    double area = 0;
    for (int v : s.mask) area += v;
    area /= static_cast<double>(s.mask.size());
    EXPECT_GE(area, 0.05) << seed;
    EXPECT_LE(area, 0.45) << seed;
  }
}

TEST(Synth, SpeckleIsMultiplicative) {
  data::SynthConfig cfg;
  cfg.count = 40;
  cfg.shadow_prob = 0.0;
  std::vector<double> means, stds;
  for (const auto& s : data::synth_generate(cfg)) {
    for (int region : {0, 1}) {
      double sum = 0, sum2 = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < s.mask.size(); ++i) {
        if (s.mask[i] != region) continue;
        sum += s.image[i];
        sum2 += s.image[i] * s.image[i];
        ++n;
      }
      means.push_back(sum / n);
      stds.push_back(std::sqrt(std::max(0.0, sum2 / n - (sum / n) * (sum / n))));
    }
  }
  const double n = static_cast<double>(means.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    mx += means[i] / n;
    my += stds[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    sxy += (means[i] - mx) * (stds[i] - my);
    sxx += (means[i] - mx) * (means[i] - mx);
    syy += (stds[i] - my) * (stds[i] - my);
  }
  EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.5);
}

TEST(Synth, ValuesInRange) {
  data::SynthConfig cfg;
  cfg.count = 5;
  cfg.noise_sigma = 0.8;
  for (const auto& s : data::synth_generate(cfg)) {
    for (double v : s.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  cfg.count = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Split, TenGivesEightOneOne) {
  auto s = data::split(10, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, RemainderGoesToTrain) {
  auto s = data::split(1, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_TRUE(s.val.empty());
  EXPECT_TRUE(s.test.empty());
  EXPECT_THROW(data::split(0, {0.8, 0.1, 0.1}, 3), DataError);
  EXPECT_THROW(data::split(5, {0.8, 0.3, 0.1}, 3), ConfigError);
}

TEST(Split, IsPartition) {
  for (std::size_t n : {3, 17, 100}) {
    auto s = data::split(n, {0.8, 0.1, 0.1}, n);
    std::set<std::size_t> all;
    for (auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), n);
    EXPECT_EQ(s.val.size(), static_cast<std::size_t>(std::floor(n * 0.1 + 1e-9)));
  }
  auto a = data::split(50, {0.8, 0.1, 0.1}, 9), b = data::split(50, {0.8, 0.1, 0.1}, 9);
  EXPECT_EQ(a.val, b.val);
}

TEST(Dataset, WriteReadRoundTrip) {
  const auto dir = scratch("ds");
  data::SynthConfig cfg;
  cfg.count = 5;
  cfg.size = 32;
  data::Dataset ds{data::synth_generate(cfg),
                   {data::Split::train, data::Split::val, data::Split::test, data::Split::train, data::Split::train}};
  data::write_dataset(dir, ds);
  auto back = data::read_dataset(dir);
  ASSERT_EQ(back.samples.size(), 5u);
  EXPECT_EQ(back.splits, ds.splits);
  EXPECT_EQ(back.subset(data::Split::train).size(), 3u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back.samples[i].id, ds.samples[i].id);
    EXPECT_EQ(back.samples[i].mask, ds.samples[i].mask);
    EXPECT_LE(max_abs_diff(back.samples[i].image, ds.samples[i].image), 0.5 / 255.0 + 1e-12);
  }
  fs::remove_all(dir);
  EXPECT_THROW(data::read_dataset(dir), DataError);
}

TEST(Dataset, MakeBatch) {
  data::SynthConfig cfg;
  cfg.count = 3;
  cfg.size = 32;
  auto samples = data::synth_generate(cfg);
  auto b = data::make_batch<float>(samples, {2, 0});
  EXPECT_EQ(b.images.shape(), (Shape{2, 1, 32, 32}));
  EXPECT_EQ(b.labels.size(), 2u * 32 * 32);
  EXPECT_EQ(b.images[5], static_cast<float>(samples[2].image[5]));
  EXPECT_EQ(b.labels[1024 + 7], samples[0].mask[7]);
}

TEST(TensorIo, RoundTrip) {
  const auto dir = scratch("io");
  Rng rng(4);
  auto t = random_normal<float>({3, 2, 5}, rng);
  io::save_tensor(dir / "t.bin", t);
  EXPECT_EQ(io::load_tensor<float>(dir / "t.bin"), t);
  io::NamedTensors<double> named{{"a", random_normal<double>({4}, rng)}, {"b.c", random_normal<double>({2, 2}, rng)}};
  io::save_checkpoint(dir / "ck", named);
  EXPECT_EQ(io::load_checkpoint<double>(dir / "ck"), named);
  write_raw(dir / "bad.bin", "NOPE");
  EXPECT_THROW(io::load_tensor<float>(dir / "bad.bin"), FormatError);
  fs::remove_all(dir);
}

TEST(Config, RoundTrip) {
  KeyValues kv;
  kv.set("name", "run one");
  kv.set("lr", 0.1);
  kv.set("third", 1.0 / 3.0);
  kv.set("epochs", 30);
  kv.set("fast", true);
  auto back = KeyValues::parse(kv.dump());
  EXPECT_EQ(back, kv);
  EXPECT_EQ(back.real("third"), 1.0 / 3.0);
  EXPECT_EQ(back.integer("epochs"), 30u);
  EXPECT_TRUE(back.boolean("fast"));
  EXPECT_EQ(back.str("missing", "x"), "x");
  EXPECT_THROW(back.real("name"), ConfigError);
  EXPECT_THROW(back.str("missing"), ConfigError);
  auto c = KeyValues::parse("# comment\n a = 1 \n\nb=two\n");
  EXPECT_EQ(c.integer("a"), 1u);
  EXPECT_EQ(c.str("b"), "two");
  EXPECT_THROW(KeyValues::parse("no equals sign\n"), ConfigError);
}
