#pragma once

#include "fgmamba/tensor.hpp"

namespace fgmamba {

namespace debug {
// Test fixture for the gradcheck mutation sentinel: scales the sigmoid
// backward rule by 1.02 so a correct checker must report a failure.
extern bool corrupt_sigmoid_backward;
}  // namespace debug

// Parameter bundles for the structured layers. Weights are plain tensors so
// the same structs serve the float training path and the double gradient
// checks.
template <typename T>
struct ConvParams {
  Tensor<T> weight;  // (out_ch, in_ch/groups, kh, kw)
  Tensor<T> bias;    // (out_ch)
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;

  static ConvParams create(int64_t out_ch, int64_t in_ch, int64_t k, Rng& rng,
                           int64_t stride = 1, int64_t padding = 0, int64_t groups = 1);
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;    // (out) or undefined

  static LinearParams create(int64_t out, int64_t in, Rng& rng, bool with_bias = true);
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;  // (channels)
  Tensor<T> bias;  // (channels)

  static LayerNormParams create(int64_t channels);
};

// ---- elementwise ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, double factor);
template <typename T> Tensor<T> exp_op(const Tensor<T>& a);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> abs_op(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);

// ---- reductions ----
template <typename T> Tensor<T> sum_all(const Tensor<T>& a);       // -> (1)
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);      // -> (1)
template <typename T> Tensor<T> mean_spatial(const Tensor<T>& a);  // BCHW -> BC11
template <typename T> Tensor<T> mean_channel(const Tensor<T>& a);  // BCHW -> B1HW
template <typename T> Tensor<T> max_channel(const Tensor<T>& a);   // BCHW -> B1HW

// ---- shape ----
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_channels(const Tensor<T>& a, int64_t c0, int64_t c1);
template <typename T> Tensor<T> crop2d(const Tensor<T>& a, int64_t out_h, int64_t out_w);
template <typename T> Tensor<T> reflect_pad2d(const Tensor<T>& a, int64_t pad_h, int64_t pad_w);

// ---- structured layers ----
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T> Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps);
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p, double eps);
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& x, int64_t k);
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int64_t r);
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, int64_t r);

// Symmetric reflection fold of index i into [0, n). Period 2n; the edge sample
// is included, so n == 1 degenerates to replication.
int64_t reflect_index(int64_t i, int64_t n);

#define FGM_DECLARE_OPS(T)                                                                       \
  extern template struct ConvParams<T>;                                                          \
  extern template struct LinearParams<T>;                                                        \
  extern template struct LayerNormParams<T>;                                                     \
  extern template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  extern template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                          \
  extern template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  extern template Tensor<T> scale<T>(const Tensor<T>&, double);                                  \
  extern template Tensor<T> exp_op<T>(const Tensor<T>&);                                         \
  extern template Tensor<T> neg<T>(const Tensor<T>&);                                            \
  extern template Tensor<T> abs_op<T>(const Tensor<T>&);                                         \
  extern template Tensor<T> sigmoid<T>(const Tensor<T>&);                                        \
  extern template Tensor<T> silu<T>(const Tensor<T>&);                                           \
  extern template Tensor<T> softplus<T>(const Tensor<T>&);                                       \
  extern template Tensor<T> sum_all<T>(const Tensor<T>&);                                        \
  extern template Tensor<T> mean_all<T>(const Tensor<T>&);                                       \
  extern template Tensor<T> mean_spatial<T>(const Tensor<T>&);                                   \
  extern template Tensor<T> mean_channel<T>(const Tensor<T>&);                                   \
  extern template Tensor<T> max_channel<T>(const Tensor<T>&);                                    \
  extern template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                 \
  extern template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                   \
  extern template Tensor<T> slice_channels<T>(const Tensor<T>&, int64_t, int64_t);               \
  extern template Tensor<T> crop2d<T>(const Tensor<T>&, int64_t, int64_t);                       \
  extern template Tensor<T> reflect_pad2d<T>(const Tensor<T>&, int64_t, int64_t);                \
  extern template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  extern template Tensor<T> linear<T>(const Tensor<T>&, const LinearParams<T>&);                 \
  extern template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                   \
  extern template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                          double);                                               \
  extern template Tensor<T> layer_norm<T>(const Tensor<T>&, const LayerNormParams<T>&, double);  \
  extern template Tensor<T> avg_pool2d<T>(const Tensor<T>&, int64_t);                            \
  extern template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, int64_t);                         \
  extern template Tensor<T> upsample_nearest<T>(const Tensor<T>&, int64_t);

FGM_DECLARE_OPS(float)
FGM_DECLARE_OPS(double)
#undef FGM_DECLARE_OPS

}  // namespace fgmamba
