#include "pmtk/wavelet.hpp"

namespace pmtk::wavelet {
namespace {

void check_field(const Shape& s) {
  if (s.size() < 2) throw DimensionError("wavelet transform needs at least two spatial axes, got " + shape_str(s));
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw DimensionError("dwt2 needs even, nonzero spatial extents, got " + shape_str(s));
  }
}

}  // namespace

template <typename T>
SubbandSet<T> dwt2(const Tensor<T>& u) {
  check_field(u.shape());
  const Shape& s = u.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t planes = u.size() / (h * w);
  const std::size_t hh_ = h / 2, hw_ = w / 2;
  Shape sub = s;
  sub[s.size() - 2] = hh_;
  sub[s.size() - 1] = hw_;
  SubbandSet<T> out{Tensor<T>(sub), Tensor<T>(sub), Tensor<T>(sub), Tensor<T>(sub)};
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = u.ptr() + p * h * w;
    const std::size_t base = p * hh_ * hw_;
    for (std::size_t y = 0; y < hh_; ++y) {
      for (std::size_t x = 0; x < hw_; ++x) {
        const T a = src[(2 * y) * w + 2 * x];
        const T b = src[(2 * y) * w + 2 * x + 1];
        const T c = src[(2 * y + 1) * w + 2 * x];
        const T d = src[(2 * y + 1) * w + 2 * x + 1];
        const std::size_t i = base + y * hw_ + x;
        out.ll[i] = (a + b + c + d) / T(2);
        out.lh[i] = (a - b + c - d) / T(2);
        out.hl[i] = (a + b - c - d) / T(2);
        out.hh[i] = (a - b - c + d) / T(2);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> idwt2(const SubbandSet<T>& s) {
  const Shape& sub = s.ll.shape();
  if (s.lh.shape() != sub || s.hl.shape() != sub || s.hh.shape() != sub) {
    throw DimensionError("subband shapes differ");
  }
  if (sub.size() < 2) throw DimensionError("subbands need at least two spatial axes");
  const std::size_t hh_ = sub[sub.size() - 2], hw_ = sub[sub.size() - 1];
  Shape full = sub;
  full[sub.size() - 2] = 2 * hh_;
  full[sub.size() - 1] = 2 * hw_;
  Tensor<T> u(full);
  const std::size_t w = 2 * hw_;
  const std::size_t planes = hh_ * hw_ == 0 ? 0 : s.ll.size() / (hh_ * hw_);
  for (std::size_t p = 0; p < planes; ++p) {
    T* dst = u.ptr() + p * 4 * hh_ * hw_;
    const std::size_t base = p * hh_ * hw_;
    for (std::size_t y = 0; y < hh_; ++y) {
      for (std::size_t x = 0; x < hw_; ++x) {
        const std::size_t i = base + y * hw_ + x;
        const T ll = s.ll[i], lh = s.lh[i], hl = s.hl[i], hh = s.hh[i];
        dst[(2 * y) * w + 2 * x] = (ll + lh + hl + hh) / T(2);
        dst[(2 * y) * w + 2 * x + 1] = (ll - lh + hl - hh) / T(2);
        dst[(2 * y + 1) * w + 2 * x] = (ll + lh - hl - hh) / T(2);
        dst[(2 * y + 1) * w + 2 * x + 1] = (ll - lh - hl + hh) / T(2);
      }
    }
  }
  return u;
}

template <typename T>
double detail_energy(const SubbandSet<T>& s) {
  return sum_squares(s.lh) + sum_squares(s.hl);
}

template <typename T>
double total_energy(const SubbandSet<T>& s) {
  return sum_squares(s.ll) + sum_squares(s.lh) + sum_squares(s.hl) + sum_squares(s.hh);
}

template struct SubbandSet<float>;
template struct SubbandSet<double>;
template SubbandSet<float> dwt2(const Tensor<float>&);
template SubbandSet<double> dwt2(const Tensor<double>&);
template Tensor<float> idwt2(const SubbandSet<float>&);
template Tensor<double> idwt2(const SubbandSet<double>&);
template double detail_energy(const SubbandSet<float>&);
template double detail_energy(const SubbandSet<double>&);
template double total_energy(const SubbandSet<float>&);
template double total_energy(const SubbandSet<double>&);

}  // namespace pmtk::wavelet
