#pragma once

// Pure tensor kernels. No tape, no allocation beyond the returned tensors;
// safe to call concurrently on disjoint data. The autograd layer in
// autograd.hpp is built on these.

#include <cstddef>
#include <span>
#include <vector>

#include "pmtk/tensor.hpp"

namespace pmtk::kernels {

// ---- dense products -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // [m,k] x [k,n]
template <typename T>
Tensor<T> matmul_at_b(const Tensor<T>& a, const Tensor<T>& b);  // a^T b : [k,m] x [k,n]
template <typename T>
Tensor<T> matmul_a_bt(const Tensor<T>& a, const Tensor<T>& b);  // a b^T : [m,k] x [n,k]

// ---- convolution ----------------------------------------------------------
//
// Cross-correlation (no kernel flip). x is [N,C,H,W] (or [C,H,W] for a single
// image), w is [O,C,k,k] with k in {1,3}. Output extent is
// floor((H + 2*pad - k)/stride) + 1.

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad);
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& w, const Shape& x_shape, std::size_t stride,
                            std::size_t pad);
template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& grad_out, const Shape& w_shape, std::size_t stride,
                             std::size_t pad);

// ---- normalization --------------------------------------------------------

// How a tensor splits into (outer, channel, inner) for per-channel statistics:
// [N,C,H,W] -> (N, C, H*W); [C,H,W] -> (1, C, H*W); [R,C] -> (R, C, 1).
struct ChannelLayout {
  std::size_t outer = 0;
  std::size_t channels = 0;
  std::size_t inner = 0;
};
ChannelLayout channel_layout(const Shape& shape);

template <typename T>
struct NormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  Tensor<T> normalized;  // (x - mean) * inv_std, before the affine
};

inline constexpr double kNormEps = 1e-5;

template <typename T>
Tensor<T> norm_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormCache<T>* cache = nullptr);

// Returns {dx, dgamma, dbeta}.
template <typename T>
std::vector<Tensor<T>> norm_affine_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma, const NormCache<T>& cache);

// ---- resampling -----------------------------------------------------------

// Bilinear, align_corners=false: source coordinate (dst + 0.5)/factor - 0.5,
// clamped to the valid range. factor must be a power of two >= 2.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor);
template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, const Shape& x_shape, std::size_t factor);

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor);

// ---- loss -----------------------------------------------------------------

// Mean over pixels of -log softmax(logits)[label]. logits [N,K,H,W] or
// [K,H,W]; labels hold N*H*W class indices in [0,K).
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* grad = nullptr);

// Argmax over the class axis -> N*H*W labels.
template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits);

// ---- misc -----------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// 3x3 Sobel gradient magnitude per channel, replicate boundary.
template <typename T>
Tensor<T> sobel_magnitude(const Tensor<T>& x);
template <typename T>
Tensor<T> sobel_magnitude_backward(const Tensor<T>& grad_out, const Tensor<T>& x);

}  // namespace pmtk::kernels
