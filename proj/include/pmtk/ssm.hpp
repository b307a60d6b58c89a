#pragma once

// Selective state-space token mixing: patch embedding, the selective scan
// recurrence, and the residual bidirectional Vim block.
//
// Token sequences for a batch are stored as [N*L, D] with sample-major rows.

#include <cstddef>

#include "pmtk/autograd.hpp"
#include "pmtk/tensor.hpp"

namespace pmtk::ssm {

// ---- patches and token maps -----------------------------------------------

struct PatchEmbedConfig {
  std::size_t patch = 4;        // N
  std::size_t in_channels = 1;  // C
  std::size_t embed_dim = 16;   // D

  std::size_t patch_dim() const { return patch * patch * in_channels; }
  // M for an HxW input; throws DimensionError if H or W is not a multiple of patch.
  std::size_t token_count(std::size_t h, std::size_t w) const;
};

// [N,C,H,W] -> [N*M, p*p*C]. Patches run row-major over the grid; inside a
// patch the vector index is (c*p + dy)*p + dx.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t patch);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const Shape& x_shape, std::size_t patch);

// [N*gh*gw, D] -> [N, D, gh, gw], token i of a sample lands at (i / gw, i % gw).
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t batch, std::size_t grid_h, std::size_t grid_w);
template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map);

template <typename T>
Var<T> tokens_to_map(Var<T> tokens, std::size_t batch, std::size_t grid_h, std::size_t grid_w);

// X0 = patches(x) W + E_pos, with E_pos [M,D] shared across the batch.
template <typename T>
Var<T> patch_embed(Var<T> x, const PatchEmbedConfig& cfg, Var<T> w_proj, Var<T> pos);

// ---- selective scan -------------------------------------------------------

// Inputs of one scan direction for a batch of sequences.
//   x, delta: [N*L, E];  a: [E, S] (negative);  b, c: [N*L, S];  d_skip: [E]
template <typename T>
struct ScanInputs {
  const Tensor<T>& x;
  const Tensor<T>& delta;
  const Tensor<T>& a;
  const Tensor<T>& b;
  const Tensor<T>& c;
  const Tensor<T>& d_skip;
  std::size_t batch = 1;
  bool reverse = false;  // scan from the last token to the first
};

// Definitional recurrence, per channel e with h_0 = 0:
//   h_t = exp(delta_t[e] a[e]) * h_{t-1} + delta_t[e] b_t x_t[e]
//   y_t[e] = <c_t, h_t> + d_skip[e] x_t[e]
template <typename T>
Tensor<T> selective_scan_reference(const ScanInputs<T>& in);

// Chunked two-pass evaluation of the same recurrence: each chunk is scanned
// from a zero state, then the carried state is folded in through the
// running decay product. Optionally returns all states [N*L, E, S].
template <typename T>
Tensor<T> selective_scan_chunked(const ScanInputs<T>& in, std::size_t chunk = 64, Tensor<T>* states = nullptr);

// Differentiable scan (chunked forward, exact reverse recurrence backward).
template <typename T>
Var<T> selective_scan(Var<T> x, Var<T> delta, Var<T> a, Var<T> b, Var<T> c, Var<T> d_skip, std::size_t batch,
                      bool reverse);

// Depthwise causal convolution of width 3 along each sequence:
//   y_t[e] = bias[e] + sum_j w[e,j] x_{t-2+j}[e]  (zero before the start)
template <typename T>
Var<T> causal_conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t batch);

// ---- Vim block ------------------------------------------------------------

// Projections for one scan direction (bound to a tape).
//   x_proj [E, R+2S] -> (dt_in, B, C); dt_proj [R, E]; dt_bias [E];
//   a_log [E, S] with A = -exp(a_log); d_skip [E]
template <typename T>
struct SsmParams {
  Var<T> x_proj, dt_proj, dt_bias, a_log, d_skip;
};

template <typename T>
struct VimBlockWeights {
  Var<T> norm_gamma, norm_beta;  // [D]
  Var<T> in_proj;                // [D, 2E]
  Var<T> conv_w, conv_b;         // [E, 3], [E]
  SsmParams<T> fwd, bwd;
  Var<T> out_proj;  // [E, D]
};

// Sum of the forward-direction and reverse-direction scans of xc [N*L, E].
template <typename T>
Var<T> bidirectional_scan(Var<T> xc, const SsmParams<T>& fwd, const SsmParams<T>& bwd, std::size_t batch);

// X_l = Vim(X_{l-1}) + X_{l-1}; Vim = norm -> in_proj split (x, z) ->
// silu(causal_conv1d(x)) -> bidirectional scan -> * silu(z) -> out_proj.
template <typename T>
Var<T> vim_block(Var<T> tokens, const VimBlockWeights<T>& w, std::size_t batch);

// Softmax self-attention over [L, D] with Q = K = V = x; the quadratic
// reference mixer for complexity comparisons.
template <typename T>
Tensor<T> attention_reference(const Tensor<T>& x);

}  // namespace pmtk::ssm
