#pragma once

#include "fgmamba/tensor.hpp"

namespace fgmamba {

// Dense 2D spectrum of one channel plane. Spectral arithmetic runs in double
// regardless of the tensor scalar type; the forward transform is unnormalized
// and the inverse carries the 1/(H*W) factor.
struct ComplexSpectrum {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<double> re;
  std::vector<double> im;

  int64_t numel() const { return h * w; }
  double magnitude(int64_t idx) const;
};

// Binary keep-mask over frequency bins: keep[u,v] == 1 iff |F[u,v]| exceeds
// the mean magnitude of the plane (strict inequality, DC included in the
// mean).
struct FreqMask {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<uint8_t> keep;
};

template <typename T>
ComplexSpectrum fft2(const Tensor<T>& plane);  // rank-2 (H, W)

template <typename T>
Tensor<T> ifft2(const ComplexSpectrum& spec);  // real part of the inverse

FreqMask highfreq_mask(const ComplexSpectrum& spec);

// ifft2(fft2(x) . mask) with the mask recomputed per plane. Accepts a rank-2
// plane or a rank-4 BCHW tensor (per-plane masks). Differentiable; the mask
// is treated as constant, and the fixed-mask filter is self-adjoint, so the
// backward pass applies the same filter to the incoming gradient.
template <typename T>
Tensor<T> highfreq_extract(const Tensor<T>& x);

extern template ComplexSpectrum fft2<float>(const Tensor<float>&);
extern template ComplexSpectrum fft2<double>(const Tensor<double>&);
extern template Tensor<float> ifft2<float>(const ComplexSpectrum&);
extern template Tensor<double> ifft2<double>(const ComplexSpectrum&);
extern template Tensor<float> highfreq_extract<float>(const Tensor<float>&);
extern template Tensor<double> highfreq_extract<double>(const Tensor<double>&);

}  // namespace fgmamba
