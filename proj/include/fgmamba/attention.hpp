#pragma once

#include "fgmamba/ops.hpp"

namespace fgmamba {

// Squeeze/excite channel attention: global average pool, two FC layers with
// reduction ratio r, sigmoid. Produces a (B, C, 1, 1) map.
template <typename T>
struct ChannelAttentionParams {
  LinearParams<T> fc1;  // C -> C/r
  LinearParams<T> fc2;  // C/r -> C
  int64_t reduction = 4;

  static ChannelAttentionParams create(int64_t channels, int64_t reduction, Rng& rng);
};

// Channel mean/max pooled into 2 planes, k x k conv, sigmoid. Produces a
// (B, 1, H, W) map. k must be odd.
template <typename T>
struct SpatialAttentionParams {
  ConvParams<T> conv;  // 2 -> 1, k x k, padding (k-1)/2

  static SpatialAttentionParams create(int64_t k, Rng& rng);
};

// Gated Attention Unit: F . (A_c . g1 . A_s . g2) . g3 with three independent
// sigmoid gates, each a 1x1 convolution of the unit input.
template <typename T>
struct GauParams {
  ChannelAttentionParams<T> ca;
  SpatialAttentionParams<T> sa;
  ConvParams<T> gate1, gate2, gate3;  // C -> C, 1x1

  static GauParams create(int64_t channels, int64_t reduction, int64_t spatial_k, Rng& rng);
};

template <typename T>
Tensor<T> channel_attention_map(const Tensor<T>& x, const ChannelAttentionParams<T>& p);

template <typename T>
Tensor<T> channel_attention_block(const Tensor<T>& x, const ChannelAttentionParams<T>& p);

template <typename T>
Tensor<T> spatial_attention_map(const Tensor<T>& x, const SpatialAttentionParams<T>& p);

template <typename T>
Tensor<T> gau_forward(const Tensor<T>& x, const GauParams<T>& p);

#define FGM_DECLARE_ATTN(T)                                                                      \
  extern template struct ChannelAttentionParams<T>;                                             \
  extern template struct SpatialAttentionParams<T>;                                             \
  extern template struct GauParams<T>;                                                          \
  extern template Tensor<T> channel_attention_map<T>(const Tensor<T>&,                          \
                                                     const ChannelAttentionParams<T>&);         \
  extern template Tensor<T> channel_attention_block<T>(const Tensor<T>&,                        \
                                                       const ChannelAttentionParams<T>&);       \
  extern template Tensor<T> spatial_attention_map<T>(const Tensor<T>&,                          \
                                                     const SpatialAttentionParams<T>&);         \
  extern template Tensor<T> gau_forward<T>(const Tensor<T>&, const GauParams<T>&);

FGM_DECLARE_ATTN(float)
FGM_DECLARE_ATTN(double)
#undef FGM_DECLARE_ATTN

}  // namespace fgmamba
