#include "pmtk/pmd.hpp"

#include <algorithm>
#include <cmath>

#include "pmtk/kernels.hpp"
#include "pmtk/rng.hpp"
#include "pmtk/wavelet.hpp"

namespace pmtk::pmd {

DwtMode parse_dwt_mode(const std::string& s) {
  if (s == "as-written" || s == "aswritten") return DwtMode::as_written;
  if (s == "attenuate") return DwtMode::attenuate;
  throw ConfigError("unknown DWT update mode '" + s + "'");
}

std::string to_string(DwtMode m) { return m == DwtMode::as_written ? "as-written" : "attenuate"; }

Preprocess parse_preprocess(const std::string& s) {
  if (s == "pmd" || s == "full") return Preprocess::pmd;
  if (s == "identity" || s == "no-pmd") return Preprocess::identity;
  if (s == "sobel") return Preprocess::sobel;
  throw ConfigError("unknown block preprocessing '" + s + "'");
}

std::string to_string(Preprocess p) {
  switch (p) {
    case Preprocess::pmd:
      return "pmd";
    case Preprocess::identity:
      return "identity";
    case Preprocess::sobel:
      return "sobel";
  }
  return "?";
}

void DiffusionConfig::validate_fd() const {
  if (!(k > 0.0)) throw ConfigError("diffusion constant k must be positive");
  if (steps < 0) throw ConfigError("diffusion steps must be >= 0");
  if (!(dt > 0.0) || dt > kMaxStableDt) throw ConfigError("finite-difference dt must be in (0, 0.25]");
}

void DiffusionConfig::validate_dwt() const {
  if (!(k > 0.0)) throw ConfigError("diffusion constant k must be positive");
  if (steps < 0) throw ConfigError("diffusion steps must be >= 0");
}

double diffusivity(double grad_mag, double k) {
  if (!(k > 0.0)) throw ConfigError("diffusion constant k must be positive");
  const double r = grad_mag / k;
  return 1.0 / (1.0 + r * r);
}

template <typename T>
Tensor<T> diffusivity(const Tensor<T>& grad_mag, double k) {
  if (!(k > 0.0)) throw ConfigError("diffusion constant k must be positive");
  Tensor<T> out(grad_mag.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (grad_mag[i] < T(0)) throw DataError("gradient magnitude must be non-negative");
    out[i] = static_cast<T>(diffusivity(grad_mag[i], k));
  }
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> plane_extents(const Shape& s) {
  if (s.size() < 2) throw DimensionError("diffusion needs at least two spatial axes, got " + shape_str(s));
  return {s[s.size() - 2], s[s.size() - 1]};
}

}  // namespace

template <typename T>
Tensor<T> pmd_step_fd(const Tensor<T>& u, const DiffusionConfig& cfg) {
  cfg.validate_fd();
  const auto [h, w] = plane_extents(u.shape());
  const std::size_t planes = u.size() / (h * w);
  Tensor<T> out(u.shape());
  std::vector<double> fx(h * w), fy(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = u.ptr() + p * h * w;
    T* dst = out.ptr() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double c = src[y * w + x];
        const double dx = x + 1 < w ? src[y * w + x + 1] - c : 0.0;
        const double dy = y + 1 < h ? src[(y + 1) * w + x] - c : 0.0;
        const double g = diffusivity(std::sqrt(dx * dx + dy * dy), cfg.k);
        fx[y * w + x] = g * dx;
        fy[y * w + x] = g * dy;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        const double div = fx[i] - (x > 0 ? fx[i - 1] : 0.0) + fy[i] - (y > 0 ? fy[i - w] : 0.0);
        dst[i] = static_cast<T>(src[i] + cfg.dt * div);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> diffuse_fd(const Tensor<T>& u, const DiffusionConfig& cfg) {
  cfg.validate_fd();
  Tensor<T> cur = u;
  for (int s = 0; s < cfg.steps; ++s) cur = pmd_step_fd(cur, cfg);
  return cur;
}

namespace {

// Detail-band modulation: returns g for each coefficient pair.
template <typename T>
Tensor<T> detail_gain(const wavelet::SubbandSet<T>& s, double k) {
  Tensor<T> m(s.lh.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double lh = s.lh[i], hl = s.hl[i];
    m[i] = static_cast<T>(diffusivity(std::sqrt(lh * lh + hl * hl), k));
  }
  return m;
}

template <typename T>
Tensor<T> dwt_update(const Tensor<T>& u, const DiffusionConfig& cfg) {
  wavelet::SubbandSet<T> s = wavelet::dwt2(u);
  const Tensor<T> m = detail_gain(s, cfg.k);
  for (std::size_t i = 0; i < m.size(); ++i) {
    s.lh[i] *= m[i];
    s.hl[i] *= m[i];
  }
  if (cfg.mode == DwtMode::attenuate) return wavelet::idwt2(s);
  s.ll.fill(T(0));
  s.hh.fill(T(0));
  Tensor<T> out = wavelet::idwt2(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += u[i];
  return out;
}

}  // namespace

template <typename T>
Tensor<T> pmd_step_dwt(const Tensor<T>& u, const DiffusionConfig& cfg) {
  cfg.validate_dwt();
  return dwt_update(u, cfg);
}

template <typename T>
Tensor<T> diffuse_dwt(const Tensor<T>& u, const DiffusionConfig& cfg) {
  cfg.validate_dwt();
  Tensor<T> cur = u;
  for (int s = 0; s < cfg.steps; ++s) cur = dwt_update(cur, cfg);
  return cur;
}

template <typename T>
Var<T> diffuse_dwt(Var<T> u, const DiffusionConfig& cfg) {
  cfg.validate_dwt();
  Var<T> cur = u;
  for (int step = 0; step < cfg.steps; ++step) {
    Var<T> in = cur;
    cur = in.tape()->record("pmd_dwt", dwt_update(in.value(), cfg), {in}, [in, cfg](Tape<T>& t, const Tensor<T>& g) {
      const wavelet::SubbandSet<T> s = wavelet::dwt2(in.value());
      const Tensor<T> m = detail_gain(s, cfg.k);
      wavelet::SubbandSet<T> gs = wavelet::dwt2(g);
      const double inv_k2 = 1.0 / (cfg.k * cfg.k);
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double lh = s.lh[i], hl = s.hl[i], gi = m[i];
        // d(g*lh)/d(lh) = g - 2 g^2 lh^2 / k^2, cross term -2 g^2 lh hl / k^2
        const double c = 2.0 * gi * gi * inv_k2;
        const double glh = gs.lh[i], ghl = gs.hl[i];
        gs.lh[i] = static_cast<T>(glh * (gi - c * lh * lh) - ghl * c * lh * hl);
        gs.hl[i] = static_cast<T>(ghl * (gi - c * hl * hl) - glh * c * lh * hl);
      }
      if (cfg.mode == DwtMode::attenuate) {
        t.accumulate(in, wavelet::idwt2(gs));
        return;
      }
      gs.ll.fill(T(0));
      gs.hh.fill(T(0));
      Tensor<T> gx = wavelet::idwt2(gs);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      t.accumulate(in, gx);
    });
  }
  return cur;
}

template <typename T>
Var<T> pmd_block_forward(Var<T> u, const DiffusionConfig& cfg, const PmdBlockWeights<T>& w, std::size_t stride,
                         Preprocess pre) {
  const Shape& s = u.shape();
  if (s.size() != 4) throw DimensionError("pmd block expects [N,C,H,W], got " + shape_str(s));
  const std::size_t channels = s[1];
  const bool needs_proj = stride != 1 || w.conv2.shape()[0] != channels;
  if (needs_proj != w.proj.has_value()) {
    throw DimensionError(needs_proj ? "block changes width/stride but has no projection"
                                    : "projection present on a width- and stride-preserving block");
  }

  Var<T> skip = u;
  Var<T> conv_in = u;
  switch (pre) {
    case Preprocess::pmd:
      if (!(s[2] == 1 && s[3] == 1)) skip = diffuse_dwt(u, cfg);
      conv_in = skip;
      break;
    case Preprocess::identity:
      break;
    case Preprocess::sobel: {
      conv_in = concat_channels(u, sobel_magnitude(u));
      break;
    }
  }

  Var<T> h = relu(norm_affine(conv2d(conv_in, w.conv1, stride, 1), w.gamma1, w.beta1));
  h = norm_affine(conv2d(h, w.conv2, 1, 1), w.gamma2, w.beta2);
  if (w.proj) skip = norm_affine(conv2d(skip, *w.proj, stride, 0), *w.proj_gamma, *w.proj_beta);
  return relu(add(h, skip));
}

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& u, double sigma) {
  const auto [h, w] = plane_extents(u.shape());
  if (sigma <= 0.0) return u;
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += taps[i + radius];
  }
  for (auto& t : taps) t /= norm;
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return static_cast<std::size_t>(i);
  };
  const std::size_t planes = u.size() / (h * w);
  Tensor<T> out(u.shape());
  std::vector<double> tmp(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = u.ptr() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * src[y * w + reflect(long(x) + i, long(w))];
        tmp[y * w + x] = acc;
      }
    }
    T* dst = out.ptr() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * tmp[reflect(long(y) + i, long(h)) * w + x];
        dst[y * w + x] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

TwoRegionScene make_two_region_scene(std::size_t size, double sigma, std::uint64_t seed) {
  if (size < 4 || size % 2 != 0) throw ConfigError("two-region scene size must be even and >= 4");
  Rng rng(seed);
  TwoRegionScene scene;
  scene.width = scene.height = size;
  scene.image = Tensor<double>({1, size, size});
  scene.labels.resize(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const int lab = x >= size / 2 ? 1 : 0;
      scene.labels[y * size + x] = lab;
      scene.image[y * size + x] = lab + sigma * rng.normal();
    }
  }
  return scene;
}

template <typename T>
double within_region_std(const Tensor<T>& u, const std::vector<int>& labels) {
  if (u.size() != labels.size()) throw DimensionError("label count does not match image");
  double sum[2] = {0, 0}, sq[2] = {0, 0}, cnt[2] = {0, 0};
  for (std::size_t i = 0; i < u.size(); ++i) {
    const int l = labels[i] != 0 ? 1 : 0;
    sum[l] += u[i];
    sq[l] += static_cast<double>(u[i]) * u[i];
    cnt[l] += 1;
  }
  double acc = 0.0;
  for (int l = 0; l < 2; ++l) {
    if (cnt[l] == 0) throw DataError("region without pixels");
    const double mean = sum[l] / cnt[l];
    acc += std::sqrt(std::max(0.0, sq[l] / cnt[l] - mean * mean));
  }
  return acc / 2.0;
}

template <typename T>
double boundary_gap(const Tensor<T>& u, std::size_t band) {
  const auto [h, w] = plane_extents(u.shape());
  if (band == 0 || band > w / 2) throw ConfigError("boundary band must be in [1, W/2]");
  const std::size_t edge = w / 2;
  double left = 0.0, right = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t b = 0; b < band; ++b) {
      left += u[y * w + edge - 1 - b];
      right += u[y * w + edge + b];
    }
  }
  return (right - left) / static_cast<double>(h * band);
}

namespace {

double percentile(std::vector<double> v, double q) {
  const auto idx = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

Tensor<double> box3(const Tensor<double>& u) {
  const auto [h, w] = plane_extents(u.shape());
  const std::size_t planes = u.size() / (h * w);
  Tensor<double> out(u.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = long(y) + dy, xx = long(x) + dx;
            if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) continue;
            acc += u[p * h * w + std::size_t(yy) * w + std::size_t(xx)];
            ++n;
          }
        }
        out[p * h * w + y * w + x] = acc / n;
      }
    }
  }
  return out;
}

}  // namespace

QualityProbe::QualityProbe(const Tensor<double>& initial) {
  const Tensor<double> mag = kernels::sobel_magnitude(initial.rank() == 2 ? initial.reshaped({1, initial.dim(0), initial.dim(1)}) : initial);
  std::vector<double> v(mag.data().begin(), mag.data().end());
  if (v.empty()) throw DataError("empty image");
  const double median = percentile(v, 0.5);
  const double p90 = percentile(v, 0.9);
  for (std::size_t i = 0; i < mag.size(); ++i) {
    if (mag[i] <= median) flat_.push_back(i);
    if (mag[i] >= p90) edge_.push_back(i);
  }
}

double QualityProbe::flat_variance(const Tensor<double>& u) const {
  const Tensor<double> local = box3(u.rank() == 2 ? u.reshaped({1, u.dim(0), u.dim(1)}) : u);
  double acc = 0.0;
  for (std::size_t i : flat_) acc += (u[i] - local[i]) * (u[i] - local[i]);
  return flat_.empty() ? 0.0 : acc / static_cast<double>(flat_.size());
}

double QualityProbe::edge_contrast(const Tensor<double>& u) const {
  const Tensor<double> mag = kernels::sobel_magnitude(u.rank() == 2 ? u.reshaped({1, u.dim(0), u.dim(1)}) : u);
  double acc = 0.0;
  for (std::size_t i : edge_) acc += mag[i];
  return edge_.empty() ? 0.0 : acc / static_cast<double>(edge_.size());
}

#define PMTK_INSTANTIATE_PMD(T)                                                                        \
  template Tensor<T> diffusivity(const Tensor<T>&, double);                                            \
  template Tensor<T> pmd_step_fd(const Tensor<T>&, const DiffusionConfig&);                            \
  template Tensor<T> diffuse_fd(const Tensor<T>&, const DiffusionConfig&);                             \
  template Tensor<T> pmd_step_dwt(const Tensor<T>&, const DiffusionConfig&);                           \
  template Tensor<T> diffuse_dwt(const Tensor<T>&, const DiffusionConfig&);                            \
  template Var<T> diffuse_dwt(Var<T>, const DiffusionConfig&);                                         \
  template Var<T> pmd_block_forward(Var<T>, const DiffusionConfig&, const PmdBlockWeights<T>&,         \
                                    std::size_t, Preprocess);                                          \
  template Tensor<T> gaussian_blur(const Tensor<T>&, double);                                          \
  template double within_region_std(const Tensor<T>&, const std::vector<int>&);                        \
  template double boundary_gap(const Tensor<T>&, std::size_t);

PMTK_INSTANTIATE_PMD(float)
PMTK_INSTANTIATE_PMD(double)

}  // namespace pmtk::pmd
