#pragma once

#include <cstddef>

#include "ugdd/tensor.hpp"

namespace ugdd::wavelet {

/// One level of a 2-D orthonormal Haar decomposition.
///
/// For a 2x2 block [a b; c d]:
///   ll = (a+b+c+d)/2   lh = (a+b-c-d)/2   hl = (a-b+c-d)/2   hh = (a-b-c+d)/2
/// so lh responds to vertical change, hl to horizontal change.
struct SubbandSet {
  Tensor ll, lh, hl, hh;
  // Size before reflect-padding odd dimensions; idwt2 crops back to it.
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Odd height/width are reflect-padded by one row/column (edge-replicated when
/// the dimension is 1). Throws DimensionError on an empty tensor.
SubbandSet dwt2(const Tensor& x);

/// Exact inverse of dwt2. Throws DimensionError when subband shapes differ.
Tensor idwt2(const SubbandSet& s);

/// idwt2 with the approximation band zeroed: the image minus its 2x2 block means.
Tensor highfreq_reconstruct(const Tensor& x);

/// idwt2 with every detail band zeroed: the 2x2 block-mean image.
Tensor lowfreq_reconstruct(const Tensor& x);

double energy(const Tensor& t);
double energy(const SubbandSet& s);

}  // namespace ugdd::wavelet
