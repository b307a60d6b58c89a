#include "pmtk/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace pmtk {

namespace kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

void require_rank2(const Shape& s, const char* what) {
  if (s.size() != 2) throw DimensionError(std::string(what) + " expects a rank-2 tensor, got " + shape_str(s));
}

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

// Views [C,H,W] as [1,C,H,W].
Shape as_batched(const Shape& s, const char* what) {
  if (s.size() == 4) return s;
  if (s.size() == 3) return Shape{1, s[0], s[1], s[2]};
  throw DimensionError(std::string(what) + " expects [N,C,H,W] or [C,H,W], got " + shape_str(s));
}

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

struct ConvGeom {
  std::size_t n, c, h, w, o, k, ho, wo, stride, pad;
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

ConvGeom conv_geom(const Shape& x_shape, const Shape& w_shape, std::size_t stride, std::size_t pad) {
  const Shape xs = as_batched(x_shape, "conv2d");
  if (w_shape.size() != 4 || w_shape[2] != w_shape[3]) {
    throw DimensionError("conv2d weight must be [O,C,k,k], got " + shape_str(w_shape));
  }
  const std::size_t k = w_shape[2];
  if (k != 1 && k != 3) throw DimensionError("conv2d supports 1x1 and 3x3 kernels only");
  if (stride != 1 && stride != 2) throw ConfigError("conv2d stride must be 1 or 2");
  if (pad > 1) throw ConfigError("conv2d pad must be 0 or 1");
  if (w_shape[1] != xs[1]) {
    throw DimensionError("conv2d channel mismatch: input " + shape_str(x_shape) + " weight " + shape_str(w_shape));
  }
  if (xs[2] + 2 * pad < k || xs[3] + 2 * pad < k) {
    throw DimensionError("conv2d kernel larger than padded input " + shape_str(x_shape));
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], w_shape[0], k, 0, 0, stride, pad};
  g.ho = conv_out_extent(g.h, k, stride, pad);
  g.wo = conv_out_extent(g.w, k, stride, pad);
  return g;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a.shape(), "matmul");
  require_rank2(b.shape(), "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  Map<T>(out.ptr(), a.dim(0), b.dim(1)).noalias() =
      MapC<T>(a.ptr(), a.dim(0), a.dim(1)) * MapC<T>(b.ptr(), b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> matmul_at_b(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a.shape(), "matmul_at_b");
  require_rank2(b.shape(), "matmul_at_b");
  if (a.dim(0) != b.dim(0)) throw DimensionError("matmul_at_b row extents differ");
  Tensor<T> out({a.dim(1), b.dim(1)});
  Map<T>(out.ptr(), a.dim(1), b.dim(1)).noalias() =
      MapC<T>(a.ptr(), a.dim(0), a.dim(1)).transpose() * MapC<T>(b.ptr(), b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> matmul_a_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a.shape(), "matmul_a_bt");
  require_rank2(b.shape(), "matmul_a_bt");
  if (a.dim(1) != b.dim(1)) throw DimensionError("matmul_a_bt column extents differ");
  Tensor<T> out({a.dim(0), b.dim(0)});
  Map<T>(out.ptr(), a.dim(0), b.dim(0)).noalias() =
      MapC<T>(a.ptr(), a.dim(0), a.dim(1)) * MapC<T>(b.ptr(), b.dim(0), b.dim(1)).transpose();
  return out;
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) throw DimensionError("kernel larger than padded input");
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, pad);
  const std::size_t kk = g.c * g.k * g.k;
  const std::size_t hw_in = g.h * g.w;
  const std::size_t hw_out = g.ho * g.wo;
  Tensor<T> out(x.rank() == 3 ? Shape{g.o, g.ho, g.wo} : Shape{g.n, g.o, g.ho, g.wo});
  std::vector<T> cols(g.direct() ? 0 : kk * hw_out);
  const MapC<T> wm(w.ptr(), g.o, kk);
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* xn = x.ptr() + n * g.c * hw_in;
    const T* src = xn;
    if (!g.direct()) {
      im2col(xn, g.c, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, cols.data());
      src = cols.data();
    }
    Map<T>(out.ptr() + n * g.o * hw_out, g.o, hw_out).noalias() = wm * MapC<T>(src, kk, hw_out);
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& w, const Shape& x_shape, std::size_t stride,
                            std::size_t pad) {
  const ConvGeom g = conv_geom(x_shape, w.shape(), stride, pad);
  const std::size_t kk = g.c * g.k * g.k;
  const std::size_t hw_in = g.h * g.w;
  const std::size_t hw_out = g.ho * g.wo;
  Tensor<T> gx(x_shape);
  std::vector<T> cols(kk * hw_out);
  const MapC<T> wm(w.ptr(), g.o, kk);
  for (std::size_t n = 0; n < g.n; ++n) {
    const MapC<T> gy(grad_out.ptr() + n * g.o * hw_out, g.o, hw_out);
    T* gxn = gx.ptr() + n * g.c * hw_in;
    if (g.direct()) {
      Map<T>(gxn, kk, hw_out).noalias() = wm.transpose() * gy;
    } else {
      Map<T>(cols.data(), kk, hw_out).noalias() = wm.transpose() * gy;
      col2im(cols.data(), g.c, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, gxn);
    }
  }
  return gx;
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& grad_out, const Shape& w_shape, std::size_t stride,
                             std::size_t pad) {
  const ConvGeom g = conv_geom(x.shape(), w_shape, stride, pad);
  const std::size_t kk = g.c * g.k * g.k;
  const std::size_t hw_in = g.h * g.w;
  const std::size_t hw_out = g.ho * g.wo;
  Tensor<T> gw(w_shape);
  Map<T> gwm(gw.ptr(), g.o, kk);
  std::vector<T> cols(g.direct() ? 0 : kk * hw_out);
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* xn = x.ptr() + n * g.c * hw_in;
    const T* src = xn;
    if (!g.direct()) {
      im2col(xn, g.c, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, cols.data());
      src = cols.data();
    }
    gwm.noalias() += MapC<T>(grad_out.ptr() + n * g.o * hw_out, g.o, hw_out) * MapC<T>(src, kk, hw_out).transpose();
  }
  return gw;
}

ChannelLayout channel_layout(const Shape& s) {
  switch (s.size()) {
    case 4:
      return {s[0], s[1], s[2] * s[3]};
    case 3:
      return {1, s[0], s[1] * s[2]};
    case 2:
      return {s[0], s[1], 1};
    default:
      throw DimensionError("no channel layout for shape " + shape_str(s));
  }
}

template <typename T>
Tensor<T> norm_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormCache<T>* cache) {
  const ChannelLayout l = channel_layout(x.shape());
  if (l.channels == 0 || l.outer * l.inner == 0) throw DimensionError("norm_affine on zero-size channel");
  if (gamma.size() != l.channels || beta.size() != l.channels) {
    throw DimensionError("norm_affine affine parameters do not match " + std::to_string(l.channels) + " channels");
  }
  const double count = static_cast<double>(l.outer * l.inner);
  std::vector<double> mean(l.channels, 0.0), inv_std(l.channels, 0.0);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const T* p = x.ptr() + (o * l.channels + c) * l.inner;
      double s = 0.0;
      for (std::size_t i = 0; i < l.inner; ++i) s += p[i];
      mean[c] += s;
    }
  }
  for (auto& m : mean) m /= count;
  std::vector<double> var(l.channels, 0.0);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const T* p = x.ptr() + (o * l.channels + c) * l.inner;
      double s = 0.0;
      for (std::size_t i = 0; i < l.inner; ++i) {
        const double d = p[i] - mean[c];
        s += d * d;
      }
      var[c] += s;
    }
  }
  for (std::size_t c = 0; c < l.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] / count + kNormEps);

  Tensor<T> normalized(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (o * l.channels + c) * l.inner;
      const double g = gamma[c], b = beta[c];
      for (std::size_t i = 0; i < l.inner; ++i) {
        const double xh = (x[base + i] - mean[c]) * inv_std[c];
        normalized[base + i] = static_cast<T>(xh);
        out[base + i] = static_cast<T>(g * xh + b);
      }
    }
  }
  if (cache != nullptr) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(normalized);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> norm_affine_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma,
                                            const NormCache<T>& cache) {
  const Tensor<T>& xh = cache.normalized;
  const ChannelLayout l = channel_layout(xh.shape());
  const double count = static_cast<double>(l.outer * l.inner);
  std::vector<double> sum_g(l.channels, 0.0), sum_gx(l.channels, 0.0);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (o * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        sum_g[c] += grad_out[base + i];
        sum_gx[c] += static_cast<double>(grad_out[base + i]) * xh[base + i];
      }
    }
  }
  Tensor<T> dx(xh.shape()), dgamma({l.channels}), dbeta({l.channels});
  for (std::size_t c = 0; c < l.channels; ++c) {
    dgamma[c] = static_cast<T>(sum_gx[c]);
    dbeta[c] = static_cast<T>(sum_g[c]);
  }
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (o * l.channels + c) * l.inner;
      const double scale = gamma[c] * cache.inv_std[c];
      const double mg = sum_g[c] / count, mgx = sum_gx[c] / count;
      for (std::size_t i = 0; i < l.inner; ++i) {
        dx[base + i] = static_cast<T>(scale * (grad_out[base + i] - mg - xh[base + i] * mgx));
      }
    }
  }
  return {std::move(dx), std::move(dgamma), std::move(dbeta)};
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  for (std::size_t d = 0; d < taps.size(); ++d) {
    double src = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

void check_factor(std::size_t factor) {
  if (factor < 2 || !is_power_of_two(factor)) {
    throw ConfigError("upsample factor must be a power of two >= 2, got " + std::to_string(factor));
  }
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor) {
  check_factor(factor);
  const Shape xs = as_batched(x.shape(), "upsample_bilinear");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
  Shape os = x.shape();
  os[os.size() - 2] = h * factor;
  os[os.size() - 1] = w * factor;
  Tensor<T> out(os);
  const std::size_t oh = h * factor, ow = w * factor;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * h * w;
    T* dst = out.ptr() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const Tap& a = ty[y];
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const Tap& b = tx[xx];
        const double top = (1.0 - b.w1) * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1];
        const double bot = (1.0 - b.w1) * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1];
        dst[y * ow + xx] = static_cast<T>((1.0 - a.w1) * top + a.w1 * bot);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, const Shape& x_shape, std::size_t factor) {
  check_factor(factor);
  const Shape xs = as_batched(x_shape, "upsample_bilinear");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor<T> gx(x_shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = grad_out.ptr() + p * oh * ow;
    T* dst = gx.ptr() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const Tap& a = ty[y];
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const Tap& b = tx[xx];
        const double v = g[y * ow + xx];
        dst[a.i0 * w + b.i0] += static_cast<T>(v * (1.0 - a.w1) * (1.0 - b.w1));
        dst[a.i0 * w + b.i1] += static_cast<T>(v * (1.0 - a.w1) * b.w1);
        dst[a.i1 * w + b.i0] += static_cast<T>(v * a.w1 * (1.0 - b.w1));
        dst[a.i1 * w + b.i1] += static_cast<T>(v * a.w1 * b.w1);
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor) {
  if (factor == 0) throw ConfigError("avg_pool factor must be positive");
  const Shape xs = as_batched(x.shape(), "avg_pool");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  if (h % factor != 0 || w % factor != 0) throw DimensionError("avg_pool extents not divisible by factor");
  const std::size_t oh = h / factor, ow = w / factor;
  Shape os = x.shape();
  os[os.size() - 2] = oh;
  os[os.size() - 1] = ow;
  Tensor<T> out(os);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          for (std::size_t dx = 0; dx < factor; ++dx) s += x[(p * h + y * factor + dy) * w + xx * factor + dx];
        }
        out[(p * oh + y) * ow + xx] = static_cast<T>(s * inv);
      }
    }
  }
  return out;
}

template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* grad) {
  const Shape xs = as_batched(logits.shape(), "softmax_cross_entropy");
  const std::size_t n = xs[0], k = xs[1], hw = xs[2] * xs[3];
  if (labels.size() != n * hw) {
    throw DimensionError("label count " + std::to_string(labels.size()) + " does not match logits " +
                         shape_str(logits.shape()));
  }
  for (int lab : labels) {
    if (lab < 0 || static_cast<std::size_t>(lab) >= k) {
      throw DataError("label " + std::to_string(lab) + " outside [0," + std::to_string(k) + ")");
    }
  }
  if (grad != nullptr) *grad = Tensor<T>(logits.shape());
  const double inv_count = 1.0 / static_cast<double>(n * hw);
  double total = 0.0;
  std::vector<double> z(k);
  for (std::size_t b = 0; b < n; ++b) {
    const T* lb = logits.ptr() + b * k * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = lb[i];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(lb[c * hw + i]));
      double se = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        z[c] = std::exp(lb[c * hw + i] - mx);
        se += z[c];
      }
      const auto lab = static_cast<std::size_t>(labels[b * hw + i]);
      total += -(lb[lab * hw + i] - mx - std::log(se));
      if (grad != nullptr) {
        T* gb = grad->ptr() + b * k * hw;
        for (std::size_t c = 0; c < k; ++c) {
          const double p = z[c] / se - (c == lab ? 1.0 : 0.0);
          gb[c * hw + i] = static_cast<T>(p * inv_count);
        }
      }
    }
  }
  return total * inv_count;
}

template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits) {
  const Shape xs = as_batched(logits.shape(), "argmax_classes");
  const std::size_t n = xs[0], k = xs[1], hw = xs[2] * xs[3];
  std::vector<int> out(n * hw, 0);
  for (std::size_t b = 0; b < n; ++b) {
    const T* lb = logits.ptr() + b * k * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (lb[c * hw + i] > lb[best * hw + i]) best = c;
      }
      out[b * hw + i] = static_cast<int>(best);
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape as = as_batched(a.shape(), "concat_channels");
  const Shape bs = as_batched(b.shape(), "concat_channels");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3] || a.rank() != b.rank()) {
    throw DimensionError("concat_channels shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t hw = as[2] * as[3];
  Shape os = a.shape();
  os[os.size() - 3] = as[1] + bs[1];
  Tensor<T> out(os);
  for (std::size_t n = 0; n < as[0]; ++n) {
    T* dst = out.ptr() + n * (as[1] + bs[1]) * hw;
    std::copy_n(a.ptr() + n * as[1] * hw, as[1] * hw, dst);
    std::copy_n(b.ptr() + n * bs[1] * hw, bs[1] * hw, dst + as[1] * hw);
  }
  return out;
}

template <typename T>
Tensor<T> sobel_magnitude(const Tensor<T>& x) {
  const Shape xs = as_batched(x.shape(), "sobel_magnitude");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  Tensor<T> out(x.shape());
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * h * w;
    auto at = [&](std::ptrdiff_t y, std::ptrdiff_t xx) { return static_cast<double>(src[clampi(y, h) * w + clampi(xx, w)]); };
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const auto iy = static_cast<std::ptrdiff_t>(y), ix = static_cast<std::ptrdiff_t>(xx);
        const double gx = (at(iy - 1, ix + 1) + 2 * at(iy, ix + 1) + at(iy + 1, ix + 1)) -
                          (at(iy - 1, ix - 1) + 2 * at(iy, ix - 1) + at(iy + 1, ix - 1));
        const double gy = (at(iy + 1, ix - 1) + 2 * at(iy + 1, ix) + at(iy + 1, ix + 1)) -
                          (at(iy - 1, ix - 1) + 2 * at(iy - 1, ix) + at(iy - 1, ix + 1));
        out[(p * h + y) * w + xx] = static_cast<T>(std::sqrt(gx * gx + gy * gy));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> sobel_magnitude_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  const Shape xs = as_batched(x.shape(), "sobel_magnitude_backward");
  if (grad_out.shape() != x.shape()) throw DimensionError("sobel gradient shape mismatch");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  std::vector<double> acc(x.size(), 0.0);
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  // taps (dy, dx, weight) of the horizontal and vertical stencils
  static constexpr int kx[6][3] = {{-1, 1, 1}, {0, 1, 2}, {1, 1, 1}, {-1, -1, -1}, {0, -1, -2}, {1, -1, -1}};
  static constexpr int ky[6][3] = {{1, -1, 1}, {1, 0, 2}, {1, 1, 1}, {-1, -1, -1}, {-1, 0, -2}, {-1, 1, -1}};
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * h * w;
    double* dst = acc.data() + p * h * w;
    auto idx = [&](std::ptrdiff_t y, std::ptrdiff_t xx) { return clampi(y, h) * w + clampi(xx, w); };
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const auto iy = static_cast<std::ptrdiff_t>(y), ix = static_cast<std::ptrdiff_t>(xx);
        double gx = 0.0, gy = 0.0;
        for (const auto& t : kx) gx += t[2] * static_cast<double>(src[idx(iy + t[0], ix + t[1])]);
        for (const auto& t : ky) gy += t[2] * static_cast<double>(src[idx(iy + t[0], ix + t[1])]);
        const double m = std::sqrt(gx * gx + gy * gy);
        if (m == 0.0) continue;  // subgradient 0 at the cusp
        const double g = grad_out[(p * h + y) * w + xx];
        const double cx = g * gx / m, cy = g * gy / m;
        for (const auto& t : kx) dst[idx(iy + t[0], ix + t[1])] += cx * t[2];
        for (const auto& t : ky) dst[idx(iy + t[0], ix + t[1])] += cy * t[2];
      }
    }
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i]);
  return out;
}

#define PMTK_INSTANTIATE_KERNELS(T)                                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> matmul_at_b(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> matmul_a_bt(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                         \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const Shape&, std::size_t, std::size_t); \
  template Tensor<T> conv2d_grad_weight(const Tensor<T>&, const Tensor<T>&, const Shape&, std::size_t,             \
                                        std::size_t);                                                              \
  template Tensor<T> norm_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormCache<T>*);             \
  template std::vector<Tensor<T>> norm_affine_backward(const Tensor<T>&, const Tensor<T>&, const NormCache<T>&);   \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> upsample_bilinear_backward(const Tensor<T>&, const Shape&, std::size_t);                      \
  template Tensor<T> avg_pool(const Tensor<T>&, std::size_t);                                                      \
  template double softmax_cross_entropy(const Tensor<T>&, std::span<const int>, Tensor<T>*);                       \
  template std::vector<int> argmax_classes(const Tensor<T>&);                                                      \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sobel_magnitude(const Tensor<T>&);                                                            \
  template Tensor<T> sobel_magnitude_backward(const Tensor<T>&, const Tensor<T>&);

PMTK_INSTANTIATE_KERNELS(float)
PMTK_INSTANTIATE_KERNELS(double)

}  // namespace kernels
}  // namespace pmtk
