#pragma once

#include "fgmamba/ops.hpp"

namespace fgmamba {

// Flattening orders for scanning a 2D feature map. Each order is a bijection
// on pixel indices.
enum class ScanDirection {
  kRowMajor = 0,
  kRowMajorReverse = 1,
  kColMajor = 2,
  kColMajorReverse = 3,
};

// Pixel linear indices (y * w + x) in scan order.
std::vector<int64_t> scan_order(ScanDirection dir, int64_t h, int64_t w);

// Learned parameters of one selective-scan head. The state matrix is stored
// as a_log with A = -exp(a_log), which keeps A strictly negative.
template <typename T>
struct S6Params {
  Tensor<T> delta_w;     // (E, E), no bias; delta_bias is the bias term
  Tensor<T> delta_bias;  // (E)
  Tensor<T> b_w;         // (N, E)
  Tensor<T> c_w;         // (N, E)
  Tensor<T> a_log;       // (E, N)
  Tensor<T> d_skip;      // (E)

  static S6Params create(int64_t channels, int64_t state_dim, Rng& rng);
  int64_t channels() const { return a_log.size(0); }
  int64_t state_dim() const { return a_log.size(1); }
};

// Core recurrence on already-projected sequences:
//   h_t = exp(dt_t * A) . h_{t-1} + (dt_t * B_t) * x_t,   y_t = C_t . h_t + D * x_t
// x, dt: (B, L, E); b_seq, c_seq: (B, L, N); a: (E, N); d: (E). dt must be
// positive (softplus applied by the caller).
template <typename T>
Tensor<T> scan_core(const Tensor<T>& x, const Tensor<T>& dt, const Tensor<T>& b_seq,
                    const Tensor<T>& c_seq, const Tensor<T>& a, const Tensor<T>& d);

// Full selective scan: input-dependent dt/B/C projections followed by the
// recurrence. Accepts (L, E) or (B, L, E).
template <typename T>
Tensor<T> selective_scan_1d(const Tensor<T>& x, const S6Params<T>& p);

// (B, C, H, W) -> (B, L, C) sequence in the given scan order, and back.
template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x, ScanDirection dir);
template <typename T>
Tensor<T> from_sequence(const Tensor<T>& seq, ScanDirection dir, int64_t h, int64_t w);

// Four-direction 2D selective-scan block: 1x1 expansion (main + gate paths),
// depthwise 3x3 + SiLU, per-direction scans merged by mean, SiLU gating, 1x1
// projection back to model width.
template <typename T>
struct Vssm2d {
  ConvParams<T> in_proj;   // C -> 2E, 1x1
  ConvParams<T> dw_conv;   // depthwise 3x3 on E
  S6Params<T> dirs[4];
  ConvParams<T> out_proj;  // E -> C, 1x1

  static Vssm2d create(int64_t channels, int64_t state_dim, int64_t expansion, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  int64_t expanded_width() const { return dw_conv.weight.size(0); }
};

#define FGM_DECLARE_SSM(T)                                                                      \
  extern template struct S6Params<T>;                                                          \
  extern template struct Vssm2d<T>;                                                            \
  extern template Tensor<T> scan_core<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  extern template Tensor<T> selective_scan_1d<T>(const Tensor<T>&, const S6Params<T>&);        \
  extern template Tensor<T> to_sequence<T>(const Tensor<T>&, ScanDirection);                   \
  extern template Tensor<T> from_sequence<T>(const Tensor<T>&, ScanDirection, int64_t, int64_t);

FGM_DECLARE_SSM(float)
FGM_DECLARE_SSM(double)
#undef FGM_DECLARE_SSM

}  // namespace fgmamba
