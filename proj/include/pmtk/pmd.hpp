#pragma once

// Perona-Malik diffusion: an explicit finite-difference reference solver and
// the wavelet-domain update used inside the encoder blocks.

#include <optional>
#include <string>
#include <vector>

#include "pmtk/autograd.hpp"
#include "pmtk/tensor.hpp"

namespace pmtk::pmd {

// How the wavelet-domain update is applied.
//   as_written: u + idwt2({0, g*lh, g*hl, 0})
//   attenuate:  idwt2({ll, g*lh, g*hl, hh})
enum class DwtMode { as_written, attenuate };

DwtMode parse_dwt_mode(const std::string& s);
std::string to_string(DwtMode m);

struct DiffusionConfig {
  double k = 1.0;    // contrast constant
  int steps = 1;     // iterations
  double dt = 1.0;   // step size; the wavelet form always uses 1
  DwtMode mode = DwtMode::attenuate;

  // Throws ConfigError. The finite-difference scheme is only stable for
  // dt <= 0.25.
  void validate_fd() const;
  void validate_dwt() const;
};

inline constexpr double kMaxStableDt = 0.25;

// g(m) = 1 / (1 + (m/k)^2)
double diffusivity(double grad_mag, double k);
template <typename T>
Tensor<T> diffusivity(const Tensor<T>& grad_mag, double k);

// One explicit Euler step of div(g(|grad u|) grad u) on every HxW plane:
// forward differences for the gradient, backward differences for the
// divergence, zero flux across the border.
template <typename T>
Tensor<T> pmd_step_fd(const Tensor<T>& u, const DiffusionConfig& cfg);

// cfg.steps applications of pmd_step_fd.
template <typename T>
Tensor<T> diffuse_fd(const Tensor<T>& u, const DiffusionConfig& cfg);

// One wavelet-domain update with the detail bands modulated by
// g(sqrt(lh^2 + hl^2)).
template <typename T>
Tensor<T> pmd_step_dwt(const Tensor<T>& u, const DiffusionConfig& cfg);

template <typename T>
Tensor<T> diffuse_dwt(const Tensor<T>& u, const DiffusionConfig& cfg);

// Differentiable form of diffuse_dwt. The backward pass uses the exact
// Jacobian of the modulation, including the dependence of g on the detail
// bands.
template <typename T>
Var<T> diffuse_dwt(Var<T> u, const DiffusionConfig& cfg);

// ---- encoder block --------------------------------------------------------

// What runs ahead of the residual convolutions.
enum class Preprocess { pmd, identity, sobel };

Preprocess parse_preprocess(const std::string& s);
std::string to_string(Preprocess p);

// Weights of one residual basic block, bound to a tape. The projection
// (1x1 conv + norm) is present iff the block changes width or stride.
template <typename T>
struct PmdBlockWeights {
  Var<T> conv1, gamma1, beta1;
  Var<T> conv2, gamma2, beta2;
  std::optional<Var<T>> proj, proj_gamma, proj_beta;
};

// preprocess -> conv3x3(stride)-norm-relu -> conv3x3-norm -> + skip -> relu.
// The skip is the preprocessed input (raw input for the sobel variant, whose
// conv path sees [u, |sobel(u)|]). A 1x1 map is a constant field and passes
// the diffusion unchanged.
template <typename T>
Var<T> pmd_block_forward(Var<T> u, const DiffusionConfig& cfg, const PmdBlockWeights<T>& w, std::size_t stride,
                         Preprocess pre = Preprocess::pmd);

// ---- measurement helpers --------------------------------------------------

// Separable Gaussian blur with reflective borders on every HxW plane.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& u, double sigma);

// Synthetic two-region field: left half 0, right half 1 (vertical step at
// W/2), plus N(0, sigma^2) noise. labels are 0/1 per pixel.
struct TwoRegionScene {
  Tensor<double> image;  // [1,H,W]
  std::vector<int> labels;
  std::size_t width = 0;
  std::size_t height = 0;
};
TwoRegionScene make_two_region_scene(std::size_t size, double sigma, std::uint64_t seed);

// Mean over the two regions of the per-region standard deviation.
template <typename T>
double within_region_std(const Tensor<T>& u, const std::vector<int>& labels);

// Mean of region 1 minus mean of region 0, both restricted to the `band`
// columns adjacent to the boundary at W/2.
template <typename T>
double boundary_gap(const Tensor<T>& u, std::size_t band);

// Per-step quality probe for arbitrary images. Flat pixels are those whose
// initial Sobel magnitude is at or below the median, edge pixels those at or
// above the 90th percentile.
class QualityProbe {
 public:
  explicit QualityProbe(const Tensor<double>& initial);

  // Mean squared deviation from the 3x3 box mean over flat pixels.
  double flat_variance(const Tensor<double>& u) const;
  // Mean Sobel magnitude over edge pixels.
  double edge_contrast(const Tensor<double>& u) const;

 private:
  std::vector<std::size_t> flat_;
  std::vector<std::size_t> edge_;
};

}  // namespace pmtk::pmd
