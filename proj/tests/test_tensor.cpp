#include <gtest/gtest.h>

#include <cmath>

#include "pmtk/autograd.hpp"
#include "pmtk/gradcheck.hpp"
#include "pmtk/kernels.hpp"
#include "pmtk/rng.hpp"

using namespace pmtk;

namespace {

// Relative error in the max norm.
template <typename T>
double rel_err(const Tensor<T>& a, const Tensor<T>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    den = std::max(den, std::abs(static_cast<double>(b[i])));
  }
  return num / std::max(den, 1e-30);
}

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, o, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double s = 0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long yy = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                s += x(b, ic, yy, xx) * w(oc, ic, ki, kj);
              }
          y(b, oc, i, j) = s;
        }
  return y;
}

}  // namespace

TEST(Matmul, IdentityLeft) {
  Tensor<double> a({2, 2}, {1, 0, 0, 1}), b({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(kernels::matmul(a, b), b);
}

TEST(Matmul, ZeroColumn) {
  Tensor<double> a({1, 2}, {1, 2}), b({2, 1}, {0, 0});
  EXPECT_EQ(kernels::matmul(a, b), Tensor<double>({1, 1}, {0.0}));
}

TEST(Matmul, TripleLoopOracle) {
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    auto a = random_uniform<double>({7, 5}, rng), b = random_uniform<double>({5, 3}, rng);
    EXPECT_LE(rel_err(kernels::matmul(a, b), naive_matmul(a, b)), 1e-6);
    auto af = a.cast<float>(), bf = b.cast<float>();
    EXPECT_LE(rel_err(kernels::matmul(af, bf).cast<double>(), naive_matmul(a, b)), 1e-6);
  }
  auto a = random_uniform<double>({16, 16}, rng), b = random_uniform<double>({16, 16}, rng);
  EXPECT_LE(rel_err(kernels::matmul(a, b), naive_matmul(a, b)), 1e-6);
}

TEST(Matmul, TransposedForms) {
  Rng rng(2);
  auto a = random_uniform<double>({4, 3}, rng), b = random_uniform<double>({4, 5}, rng);
  Tensor<double> at({3, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) at(j, i) = a(i, j);
  EXPECT_LE(rel_err(kernels::matmul_at_b(a, b), naive_matmul(at, b)), 1e-12);
  auto c = random_uniform<double>({5, 3}, rng);
  Tensor<double> ct({3, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) ct(j, i) = c(i, j);
  EXPECT_LE(rel_err(kernels::matmul_a_bt(a, c), naive_matmul(a, ct)), 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(kernels::matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), DimensionError);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  Rng rng(5);
  auto x = random_uniform<double>({1, 1, 6, 6}, rng);
  Tensor<double> w({1, 1, 3, 3});
  w[4] = 1.0;
  EXPECT_EQ(kernels::conv2d(x, w, 1, 1), x);
}

TEST(Conv2d, ZeroKernel) {
  Rng rng(5);
  auto x = random_uniform<double>({1, 2, 5, 5}, rng);
  auto y = kernels::conv2d(x, Tensor<double>({3, 2, 3, 3}), 1, 1);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, SixLoopOracle) {
  Rng rng(6);
  for (std::size_t stride : {1, 2}) {
    auto x = random_uniform<double>({2, 2, 8, 8}, rng), w = random_uniform<double>({3, 2, 3, 3}, rng);
    EXPECT_LE(rel_err(kernels::conv2d(x, w, stride, 1), naive_conv(x, w, stride, 1)), 1e-6);
    auto w1 = random_uniform<double>({4, 2, 1, 1}, rng);
    EXPECT_LE(rel_err(kernels::conv2d(x, w1, stride, 0), naive_conv(x, w1, stride, 0)), 1e-6);
  }
  auto x = random_uniform<double>({1, 3, 16, 16}, rng), w = random_uniform<double>({2, 3, 3, 3}, rng);
  EXPECT_LE(rel_err(kernels::conv2d(x.cast<float>(), w.cast<float>(), 1, 1).cast<double>(), naive_conv(x, w, 1, 1)),
            1e-6);
}

TEST(Conv2d, UnbatchedInput) {
  Rng rng(7);
  auto x = random_uniform<double>({2, 5, 5}, rng), w = random_uniform<double>({3, 2, 3, 3}, rng);
  auto y = kernels::conv2d(x, w, 1, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 5, 5}));
  EXPECT_EQ(y.reshaped({1, 3, 5, 5}), kernels::conv2d(x.reshaped({1, 2, 5, 5}), w, 1, 1));
}

TEST(Elementwise, ReluAndAddIdentity) {
  Tape<double> tape(false);
  auto x = tape.constant(Tensor<double>({2}, {-1.0, 2.0}));
  EXPECT_EQ(relu(x).value(), Tensor<double>({2}, {0.0, 2.0}));
  EXPECT_EQ(add(x, tape.constant(Tensor<double>({2}))).value(), x.value());
  EXPECT_EQ(scale(x, 3.0).value(), Tensor<double>({2}, {-3.0, 6.0}));
}

TEST(Elementwise, MulGradient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto r = gradcheck::check<float>([](auto&, const auto& v) { return mul(v[0], v[1]); },
                                     {random_uniform<double>({3, 4}, rng), random_uniform<double>({3, 4}, rng)}, rng);
    EXPECT_LE(r.rel_err, 1e-3);
  }
}

TEST(Norm, ConstantInputGivesZero) {
  Tensor<double> x({2, 3, 4, 4}, 0.7), g({3}, 1.0), b({3}, 0.0);
  const auto out_t = kernels::norm_affine(x, g, b);
  for (double v : out_t.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Norm, MomentsMatchAffine) {
  Rng rng(3);
  auto x = random_normal<double>({4, 2, 8, 8}, rng, 3.0);
  Tensor<double> g({2}, {2.0, -0.5}), b({2}, {1.0, -3.0});
  auto y = kernels::norm_affine(x, g, b);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    const double cnt = 4 * 64;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 64; ++i) s += y[(n * 2 + c) * 64 + i];
    const double mean = s / cnt;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 64; ++i) s2 += std::pow(y[(n * 2 + c) * 64 + i] - mean, 2);
    EXPECT_NEAR(mean, b[c], 1e-4);
    EXPECT_NEAR(std::sqrt(s2 / cnt), std::abs(g[c]), 1e-4);
  }
}

TEST(Norm, Gradient) {
  Rng rng(4);
  auto r = gradcheck::check<double>([](auto&, const auto& v) { return norm_affine(v[0], v[1], v[2]); },
                                    {random_normal<double>({3, 2, 4, 4}, rng), random_uniform<double>({2}, rng, 0.5, 1.5),
                                     random_uniform<double>({2}, rng)},
                                    rng);
  EXPECT_LE(r.rel_err, 1e-6);
}

TEST(Upsample, ConstantStaysConstant) {
  Tensor<double> x({1, 2, 3, 3}, 0.25);
  const auto out_t = kernels::upsample_bilinear(x, 4);
  for (double v : out_t.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Upsample, HandInterpolatedGrid) {
  // half-pixel centres, edge clamped: source rows 0, .25, .75, 1
  Tensor<double> x({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  const double t[4] = {0.0, 0.25, 0.75, 1.0};
  auto y = kernels::upsample_bilinear(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y(0, 0, i, j), 2.0 * t[i] + 1.0 * t[j], 1e-15);
}

TEST(Upsample, PoolUndoesOnConstant) {
  Tensor<double> x({1, 1, 4, 4}, 1.5);
  EXPECT_EQ(kernels::avg_pool(kernels::upsample_bilinear(x, 8), 8), x);
}

TEST(Upsample, RejectsBadFactor) {
  EXPECT_THROW(kernels::upsample_bilinear(Tensor<double>({1, 1, 2, 2}), 3), ConfigError);
}

TEST(CrossEntropy, UniformLogits) {
  Tensor<double> logits({1, 2, 3, 3});
  std::vector<int> labels(9, 1);
  EXPECT_NEAR(kernels::softmax_cross_entropy(logits, labels), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, ConfidentLogits) {
  Tensor<double> logits({1, 2, 2, 2});
  std::vector<int> labels{0, 1, 1, 0};
  for (std::size_t i = 0; i < 4; ++i) logits[labels[i] * 4 + i] = 20.0;
  EXPECT_LE(kernels::softmax_cross_entropy(logits, labels), 1e-8);
}

TEST(CrossEntropy, LabelRange) {
  std::vector<int> labels{0, 2, 0, 0};
  EXPECT_THROW(kernels::softmax_cross_entropy(Tensor<double>({1, 2, 2, 2}), labels), DataError);
}

TEST(CrossEntropy, Gradient) {
  Rng rng(8);
  std::vector<int> labels;
  for (int i = 0; i < 2 * 9; ++i) labels.push_back(static_cast<int>(rng.index(3)));
  auto r = gradcheck::check<float>([&](auto&, const auto& v) { return softmax_cross_entropy(v[0], labels); },
                                   {random_normal<double>({2, 3, 3, 3}, rng)}, rng);
  EXPECT_LE(r.rel_err, 1e-3);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2, 3}, {1, -2, 3, 4, 5, 6}));
  tape.backward(sum(x));
  const auto out_t = tape.grad(x);
  for (double g : out_t.data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  Tape<double> tape;
  Tensor<double> v({3}, {1.5, -2.0, 0.25});
  auto x = tape.leaf(v);
  tape.backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(tape.grad(x)[i], 2.0 * v[i]);
}

TEST(Backward, NonScalarLossRejected) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}));
  EXPECT_THROW(tape.backward(x), Error);
}

TEST(FiniteDiff, SumIsOnes) {
  // the oracle side of the checker on its own
  Rng rng(1);
  auto r = gradcheck::check<double>([](auto&, const auto& v) { return sum(v[0]); },
                                    {random_uniform<double>({4, 4}, rng)}, rng);
  EXPECT_LE(r.rel_err, 1e-9);
}

TEST(FiniteDiff, HalfSquaredNorm) {
  Rng rng(1);
  auto r = gradcheck::check<double>([](auto&, const auto& v) { return scale(sum(mul(v[0], v[0])), 0.5); },
                                    {random_uniform<double>({5}, rng)}, rng);
  EXPECT_LE(r.rel_err, 1e-8);
}

TEST(FiniteDiff, MatmulChain) {
  Rng rng(9);
  auto r = gradcheck::check<float>([](auto&, const auto& v) { return relu(matmul(matmul(v[0], v[1]), v[2])); },
                                   {random_uniform<double>({3, 4}, rng), random_uniform<double>({4, 5}, rng),
                                    random_uniform<double>({5, 2}, rng)},
                                   rng);
  EXPECT_LE(r.rel_err, 1e-3);
}

TEST(FiniteDiff, ConvAndUpsample) {
  Rng rng(10);
  auto r = gradcheck::check<double>(
      [](auto&, const auto& v) { return upsample_bilinear(conv2d(v[0], v[1], 2, 1), 2); },
      {random_uniform<double>({2, 2, 6, 6}, rng), random_uniform<double>({3, 2, 3, 3}, rng)}, rng);
  EXPECT_LE(r.rel_err, 1e-6);
}

TEST(FiniteDiff, ShrinksStepNearKink) {
  Rng rng(0);
  auto f = [](auto&, const auto& v) { return sum(relu(v[0])); };
  auto r = gradcheck::check<double>(f, {Tensor<double>({3}, {3e-7, -0.5, 0.5})}, rng);
  EXPECT_EQ(r.shrunk, 1u);
  EXPECT_EQ(r.skipped, 0u);
  EXPECT_LE(r.rel_err, 1e-9);
}

TEST(FiniteDiff, SkipsCoordinateOnKink) {
  Rng rng(0);
  auto f = [](auto&, const auto& v) { return sum(relu(v[0])); };
  auto r = gradcheck::check<double>(f, {Tensor<double>({2}, {0.0, 0.5})}, rng);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.coords, 1u);
  EXPECT_LE(r.rel_err, 1e-9);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Rng a(42), b(42);
  auto x1 = random_uniform<float>({2, 3, 8, 8}, a), w1 = random_uniform<float>({4, 3, 3, 3}, a);
  auto x2 = random_uniform<float>({2, 3, 8, 8}, b), w2 = random_uniform<float>({4, 3, 3, 3}, b);
  EXPECT_EQ(kernels::conv2d(x1, w1, 1, 1), kernels::conv2d(x2, w2, 1, 1));
}

TEST(Tensor, ReshapeChecksCount) {
  Tensor<float> t({2, 3});
  EXPECT_NO_THROW(t.reshaped({3, 2}));
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), DimensionError);
}
