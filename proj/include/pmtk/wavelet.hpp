#pragma once

#include "pmtk/tensor.hpp"

namespace pmtk::wavelet {

// Single-level orthonormal Haar subbands. For each 2x2 block [a b; c d]:
//   ll = (a+b+c+d)/2   lh = (a-b+c-d)/2   (horizontal detail, ~ du/dx)
//   hl = (a+b-c-d)/2   hh = (a-b-c+d)/2   (hl: vertical detail, ~ du/dy)
template <typename T>
struct SubbandSet {
  Tensor<T> ll, lh, hl, hh;

  const Shape& shape() const { return ll.shape(); }
};

// u is [C,H,W] or [N,C,H,W] with even H and W; each subband has the same
// leading extents and H/2 x W/2 spatially.
template <typename T>
SubbandSet<T> dwt2(const Tensor<T>& u);

template <typename T>
Tensor<T> idwt2(const SubbandSet<T>& s);

// ||lh||^2 + ||hl||^2
template <typename T>
double detail_energy(const SubbandSet<T>& s);

template <typename T>
double total_energy(const SubbandSet<T>& s);

}  // namespace pmtk::wavelet
