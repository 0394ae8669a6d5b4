#pragma once

#include <iosfwd>
#include <unordered_map>

#include "fgmamba/model.hpp"

namespace fgmamba {

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Standard bias-corrected Adam. Moment buffers are keyed by parameter
// storage identity; the step counter advances once per step() call.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Options opt = {}) : opt_(opt) {}

  void step(const std::vector<std::pair<std::string, Tensor<T>*>>& params);
  int64_t step_count() const { return t_; }
  const Options& options() const { return opt_; }

 private:
  struct Slot {
    std::vector<T> m, v;
  };
  Options opt_;
  int64_t t_ = 0;
  std::unordered_map<const void*, Slot> slots_;
};

// 10 * log10(peak^2 / MSE); returns +infinity when MSE == 0.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// computed per channel plane ("valid" windows) and averaged.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak);

// Separable antialiased Catmull-Rom (a = -0.5) resampling by an integer
// factor; symmetric reflection at the borders. Extents must divide by scale.
template <typename T>
Tensor<T> bicubic_downsample(const Tensor<T>& image, int64_t scale);

enum class AugmentOp { kNone, kHFlip, kRot90, kRot180, kRot270 };

template <typename T>
Tensor<T> apply_augment(const Tensor<T>& chw, AugmentOp op);

struct TrainSample {
  Tensor<float> hr;  // (C, H, W), extents exact multiples of scale
  Tensor<float> lr;  // (C, H/scale, W/scale)
  int64_t image_id = 0;
  int64_t crop_y = 0;
  int64_t crop_x = 0;
  std::string augment_tag = "none";
};

TrainSample augment(const TrainSample& sample, AugmentOp op);

struct TrainOptions {
  int64_t steps = 500;
  uint64_t seed = 1;
  int64_t batch = 8;
  int64_t patch_hr = 64;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool augment = false;
  int64_t val_every = 100;
};

struct TrainResult {
  std::vector<std::string> log_lines;  // "step=<n> loss=<f> [psnr=<f> ssim=<f>]"
  double final_loss = 0.0;
  double final_psnr = 0.0;
  double final_ssim = 0.0;
  bool diverged = false;
  int64_t steps_run = 0;
};

// Deterministic given (model seed, options seed, data). Validation PSNR/SSIM
// are computed on the first image pair every val_every steps and at the end.
TrainResult train_loop(FgMamba<float>& model, const std::vector<Tensor<float>>& hr_images,
                       int64_t scale, const TrainOptions& opts, std::ostream* echo = nullptr);

std::string format_metric(double value);  // fixed formatting; "inf" for infinity

#define FGM_DECLARE_TRAINING(T)                                                         \
  extern template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);             \
  extern template class Adam<T>;                                                        \
  extern template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double);           \
  extern template double ssim<T>(const Tensor<T>&, const Tensor<T>&, double);           \
  extern template Tensor<T> bicubic_downsample<T>(const Tensor<T>&, int64_t);           \
  extern template Tensor<T> apply_augment<T>(const Tensor<T>&, AugmentOp);

FGM_DECLARE_TRAINING(float)
FGM_DECLARE_TRAINING(double)
#undef FGM_DECLARE_TRAINING

}  // namespace fgmamba
