#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fgmamba/attention.hpp"
#include "fgmamba/spectral.hpp"
#include "fgmamba/ssm.hpp"

namespace fgmamba {

// Architecture hyperparameters. The learnable parameter count is a
// deterministic function of this struct.
struct ModelConfig {
  int64_t channels = 16;
  int64_t n_fgblocks = 2;
  int64_t n_gasm_per_block = 2;
  int64_t scale = 2;  // {2, 3, 4}
  int64_t state_dim = 8;
  int64_t expansion = 2;
  bool use_gau = true;
  bool use_pffm = true;
  int64_t in_channels = 1;

  // Fixed knobs shared by every instantiation.
  static constexpr double kNormEps = 1e-6;
  static constexpr int64_t kCaReduction = 4;
  static constexpr int64_t kSpatialKernel = 7;

  void validate() const;
  // Grouped fusion uses one group per pyramid scale when the width allows it
  // (channels divisible by 3), otherwise a dense 1x1.
  int64_t fusion_groups() const { return channels % 3 == 0 ? 3 : 1; }

  // Named presets: "paper" (parameter budget in [0.70M, 0.75M]), "desk"
  // (unit-test scale), "tiny" (gradient-check scale).
  static ModelConfig preset(const std::string& name);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct GasmParams {
  LayerNormParams<T> norm1, norm2;
  Vssm2d<T> vssm;
  std::optional<GauParams<T>> gau;
  ConvParams<T> conv_a, conv_b;  // 3x3, width-preserving
  ChannelAttentionParams<T> ca_tail;
  Tensor<T> gamma1, gamma2;  // learnable residual scalars, init 1.0

  static GasmParams create(const ModelConfig& cfg, Rng& rng);
};

template <typename T>
struct PffmParams {
  Tensor<T> alpha1, alpha2, alpha4;  // per-scale weights, init 1.0
  Tensor<T> gamma;                   // output scale, init 0.1
  ConvParams<T> fuse;                // 3C -> C, 1x1, grouped

  static PffmParams create(const ModelConfig& cfg, Rng& rng);
};

template <typename T>
struct FgBlockParams {
  std::vector<GasmParams<T>> gasms;
  std::optional<PffmParams<T>> pffm;

  static FgBlockParams create(const ModelConfig& cfg, Rng& rng);
};

template <typename T>
Tensor<T> gasm_forward(const Tensor<T>& x, const GasmParams<T>& p);

template <typename T>
Tensor<T> pffm_forward(const Tensor<T>& x, const PffmParams<T>& p);

template <typename T>
Tensor<T> fgblock_forward(const Tensor<T>& x, const FgBlockParams<T>& p);

// The full network: shallow conv, FGBlocks, global residual, reconstruction
// head (expand conv, pixel shuffle, output conv).
template <typename T>
class FgMamba {
 public:
  FgMamba(ModelConfig cfg, uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x) const;
  const ModelConfig& config() const { return cfg_; }

  using ParamFn = std::function<void(const std::string&, Tensor<T>&)>;
  void for_each_param(const ParamFn& fn);
  std::vector<std::string> param_names();
  int64_t param_count();
  void drop_grads();

 private:
  ModelConfig cfg_;
  ConvParams<T> head_;
  std::vector<FgBlockParams<T>> blocks_;
  ConvParams<T> tail_up_;
  ConvParams<T> tail_out_;
};

int64_t param_count(const ModelConfig& cfg);

// Per-module parameter totals keyed by a coarse group label; used by the CLI.
std::vector<std::pair<std::string, int64_t>> param_count_by_module(const ModelConfig& cfg);

#define FGM_DECLARE_MODEL(T)                                                    \
  extern template struct GasmParams<T>;                                        \
  extern template struct PffmParams<T>;                                        \
  extern template struct FgBlockParams<T>;                                     \
  extern template class FgMamba<T>;                                            \
  extern template Tensor<T> gasm_forward<T>(const Tensor<T>&, const GasmParams<T>&);   \
  extern template Tensor<T> pffm_forward<T>(const Tensor<T>&, const PffmParams<T>&);   \
  extern template Tensor<T> fgblock_forward<T>(const Tensor<T>&, const FgBlockParams<T>&);

FGM_DECLARE_MODEL(float)
FGM_DECLARE_MODEL(double)
#undef FGM_DECLARE_MODEL

}  // namespace fgmamba
