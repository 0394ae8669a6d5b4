#include "fgmamba/attention.hpp"

namespace fgmamba {

template <typename T>
ChannelAttentionParams<T> ChannelAttentionParams<T>::create(int64_t channels, int64_t reduction,
                                                            Rng& rng) {
  FGM_CHECK(reduction >= 1 && channels >= reduction,
            "channel attention: channel count below reduction ratio");
  ChannelAttentionParams p;
  int64_t hidden = channels / reduction;
  p.fc1 = LinearParams<T>::create(hidden, channels, rng);
  p.fc2 = LinearParams<T>::create(channels, hidden, rng);
  p.reduction = reduction;
  return p;
}

template <typename T>
SpatialAttentionParams<T> SpatialAttentionParams<T>::create(int64_t k, Rng& rng) {
  FGM_CHECK(k >= 1 && k % 2 == 1, "spatial attention: kernel size must be odd");
  SpatialAttentionParams p;
  p.conv = ConvParams<T>::create(1, 2, k, rng, 1, (k - 1) / 2);
  return p;
}

template <typename T>
GauParams<T> GauParams<T>::create(int64_t channels, int64_t reduction, int64_t spatial_k,
                                  Rng& rng) {
  GauParams p;
  p.ca = ChannelAttentionParams<T>::create(channels, reduction, rng);
  p.sa = SpatialAttentionParams<T>::create(spatial_k, rng);
  p.gate1 = ConvParams<T>::create(channels, channels, 1, rng);
  p.gate2 = ConvParams<T>::create(channels, channels, 1, rng);
  p.gate3 = ConvParams<T>::create(channels, channels, 1, rng);
  return p;
}

template <typename T>
Tensor<T> channel_attention_map(const Tensor<T>& x, const ChannelAttentionParams<T>& p) {
  FGM_CHECK(x.rank() == 4, "channel_attention_map expects BCHW");
  int64_t b = x.size(0), c = x.size(1);
  FGM_CHECK(c >= p.reduction, "channel attention: channel count below reduction ratio");
  Tensor<T> pooled = reshape(mean_spatial(x), {b, c});
  Tensor<T> hidden = silu(linear(pooled, p.fc1));
  Tensor<T> weights = sigmoid(linear(hidden, p.fc2));
  return reshape(weights, {b, c, 1, 1});
}

template <typename T>
Tensor<T> channel_attention_block(const Tensor<T>& x, const ChannelAttentionParams<T>& p) {
  return mul(x, channel_attention_map(x, p));
}

template <typename T>
Tensor<T> spatial_attention_map(const Tensor<T>& x, const SpatialAttentionParams<T>& p) {
  FGM_CHECK(x.rank() == 4, "spatial_attention_map expects BCHW");
  Tensor<T> stats = concat_channels<T>({mean_channel(x), max_channel(x)});
  return sigmoid(conv2d(stats, p.conv));
}

template <typename T>
Tensor<T> gau_forward(const Tensor<T>& x, const GauParams<T>& p) {
  Tensor<T> a_c = channel_attention_map(x, p.ca);
  Tensor<T> a_s = spatial_attention_map(x, p.sa);
  Tensor<T> g1 = sigmoid(conv2d(x, p.gate1));
  Tensor<T> g2 = sigmoid(conv2d(x, p.gate2));
  Tensor<T> g3 = sigmoid(conv2d(x, p.gate3));
  Tensor<T> inner = mul(mul(mul(a_c, g1), a_s), g2);
  return mul(mul(x, inner), g3);
}

#define FGM_INSTANTIATE_ATTN(T)                                                           \
  template struct ChannelAttentionParams<T>;                                              \
  template struct SpatialAttentionParams<T>;                                              \
  template struct GauParams<T>;                                                           \
  template Tensor<T> channel_attention_map<T>(const Tensor<T>&,                           \
                                              const ChannelAttentionParams<T>&);          \
  template Tensor<T> channel_attention_block<T>(const Tensor<T>&,                         \
                                                const ChannelAttentionParams<T>&);        \
  template Tensor<T> spatial_attention_map<T>(const Tensor<T>&,                           \
                                              const SpatialAttentionParams<T>&);          \
  template Tensor<T> gau_forward<T>(const Tensor<T>&, const GauParams<T>&);

FGM_INSTANTIATE_ATTN(float)
FGM_INSTANTIATE_ATTN(double)
#undef FGM_INSTANTIATE_ATTN

}  // namespace fgmamba
