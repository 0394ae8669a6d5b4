#include "fgmamba/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace fgmamba {

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  FGM_CHECK(pred.shape() == target.shape(),
            "l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                shape_str(target.shape()));
  return mean_all(abs_op(sub(pred, target)));
}

template <typename T>
void Adam<T>::step(const std::vector<std::pair<std::string, Tensor<T>*>>& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (const auto& [name, param] : params) {
    FGM_CHECK(param && param->defined(), "adam: undefined parameter " + name);
    FGM_CHECK(param->has_grad(), "adam: missing gradient for tracked parameter " + name);
    auto g = param->grad();
    auto theta = param->data();
    Slot& slot = slots_[param->storage_key()];
    if (slot.m.empty()) {
      slot.m.assign(theta.size(), T(0));
      slot.v.assign(theta.size(), T(0));
    }
    FGM_CHECK(slot.m.size() == theta.size(), "adam: slot shape drift for " + name);
    for (size_t i = 0; i < theta.size(); ++i) {
      double gi = static_cast<double>(g[i]);
      double m = opt_.beta1 * static_cast<double>(slot.m[i]) + (1.0 - opt_.beta1) * gi;
      double v = opt_.beta2 * static_cast<double>(slot.v[i]) + (1.0 - opt_.beta2) * gi * gi;
      slot.m[i] = static_cast<T>(m);
      slot.v[i] = static_cast<T>(v);
      double update = opt_.lr * (m / bc1) / (std::sqrt(v / bc2) + opt_.eps);
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - update);
    }
  }
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  FGM_CHECK(a.shape() == b.shape(), "psnr: shape mismatch");
  FGM_CHECK(peak > 0, "psnr: peak must be positive");
  auto av = a.data();
  auto bv = b.data();
  double mse = 0;
  for (size_t i = 0; i < av.size(); ++i) {
    double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(av.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int64_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_window_1d() {
  std::vector<double> w(static_cast<size_t>(kSsimWindow));
  double sum = 0;
  for (int64_t i = 0; i < kSsimWindow; ++i) {
    double d = static_cast<double>(i - kSsimWindow / 2);
    w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable Gaussian filter of one plane.
void gauss_valid(const std::vector<double>& src, int64_t h, int64_t w,
                 const std::vector<double>& win, std::vector<double>& tmp,
                 std::vector<double>& dst) {
  int64_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  tmp.assign(static_cast<size_t>(h * ow), 0.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (int64_t k = 0; k < kSsimWindow; ++k) acc += win[static_cast<size_t>(k)] * src[static_cast<size_t>(y * w + x + k)];
      tmp[static_cast<size_t>(y * ow + x)] = acc;
    }
  dst.assign(static_cast<size_t>(oh * ow), 0.0);
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (int64_t k = 0; k < kSsimWindow; ++k) acc += win[static_cast<size_t>(k)] * tmp[static_cast<size_t>((y + k) * ow + x)];
      dst[static_cast<size_t>(y * ow + x)] = acc;
    }
}

double ssim_plane(const double* a, const double* b, int64_t h, int64_t w, double peak) {
  static const std::vector<double> win = gaussian_window_1d();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  int64_t n = h * w;
  std::vector<double> pa(a, a + n), pb(b, b + n), paa(static_cast<size_t>(n)),
      pbb(static_cast<size_t>(n)), pab(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    paa[static_cast<size_t>(i)] = a[i] * a[i];
    pbb[static_cast<size_t>(i)] = b[i] * b[i];
    pab[static_cast<size_t>(i)] = a[i] * b[i];
  }
  std::vector<double> tmp, mu_a, mu_b, mu_aa, mu_bb, mu_ab;
  gauss_valid(pa, h, w, win, tmp, mu_a);
  gauss_valid(pb, h, w, win, tmp, mu_b);
  gauss_valid(paa, h, w, win, tmp, mu_aa);
  gauss_valid(pbb, h, w, win, tmp, mu_bb);
  gauss_valid(pab, h, w, win, tmp, mu_ab);
  double total = 0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    double ma = mu_a[i], mb = mu_b[i];
    double va = mu_aa[i] - ma * ma;
    double vb = mu_bb[i] - mb * mb;
    double cov = mu_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  FGM_CHECK(a.shape() == b.shape(), "ssim: shape mismatch");
  FGM_CHECK(peak > 0, "ssim: peak must be positive");
  FGM_CHECK(a.rank() >= 2, "ssim: rank-2 plane or (C, H, W)/(B, C, H, W) image expected");
  int64_t h = a.size(a.rank() - 2), w = a.size(a.rank() - 1);
  FGM_CHECK(h >= kSsimWindow && w >= kSsimWindow, "ssim: image smaller than 11x11 window");
  int64_t planes = a.numel() / (h * w);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> pa(static_cast<size_t>(h * w)), pb(static_cast<size_t>(h * w));
  double total = 0;
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t i = 0; i < h * w; ++i) {
      pa[static_cast<size_t>(i)] = static_cast<double>(av[p * h * w + i]);
      pb[static_cast<size_t>(i)] = static_cast<double>(bv[p * h * w + i]);
    }
    total += ssim_plane(pa.data(), pb.data(), h, w, peak);
  }
  return total / static_cast<double>(planes);
}

namespace {

double cubic_kernel(double t) {
  constexpr double a = -0.5;  // Catmull-Rom family
  t = std::abs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0);
  return 0.0;
}

struct ResampleTap {
  std::vector<int64_t> index;
  std::vector<double> weight;
};

// Antialiased taps for one output coordinate along an axis of length n.
std::vector<ResampleTap> make_taps(int64_t n_in, int64_t scale) {
  int64_t n_out = n_in / scale;
  double s = static_cast<double>(scale);
  double support = 2.0 * s;
  std::vector<ResampleTap> taps(static_cast<size_t>(n_out));
  for (int64_t i = 0; i < n_out; ++i) {
    double center = (static_cast<double>(i) + 0.5) * s - 0.5;
    int64_t lo = static_cast<int64_t>(std::ceil(center - support));
    int64_t hi = static_cast<int64_t>(std::floor(center + support));
    ResampleTap tap;
    double sum = 0;
    for (int64_t j = lo; j <= hi; ++j) {
      double wgt = cubic_kernel((static_cast<double>(j) - center) / s);
      if (wgt == 0.0) continue;
      tap.index.push_back(reflect_index(j, n_in));
      tap.weight.push_back(wgt);
      sum += wgt;
    }
    for (double& wgt : tap.weight) wgt /= sum;  // partition of unity
    taps[static_cast<size_t>(i)] = std::move(tap);
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bicubic_downsample(const Tensor<T>& image, int64_t scale) {
  FGM_CHECK(scale >= 1, "bicubic_downsample: scale must be >= 1");
  FGM_CHECK(image.rank() == 3 || image.rank() == 4,
            "bicubic_downsample expects (C, H, W) or (B, C, H, W)");
  int64_t h = image.size(image.rank() - 2), w = image.size(image.rank() - 1);
  FGM_CHECK(h % scale == 0 && w % scale == 0,
            "bicubic_downsample: extents must divide by scale");
  int64_t planes = image.numel() / (h * w);
  int64_t oh = h / scale, ow = w / scale;
  auto taps_x = make_taps(w, scale);
  auto taps_y = make_taps(h, scale);
  Shape out_shape = image.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor<T> out(out_shape);
  auto src = image.data();
  auto dst = out.data();
  std::vector<double> row_pass(static_cast<size_t>(h * ow));
  for (int64_t p = 0; p < planes; ++p) {
    const T* plane = src.data() + p * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        const ResampleTap& tap = taps_x[static_cast<size_t>(x)];
        double acc = 0;
        for (size_t k = 0; k < tap.index.size(); ++k)
          acc += tap.weight[k] * static_cast<double>(plane[y * w + tap.index[k]]);
        row_pass[static_cast<size_t>(y * ow + x)] = acc;
      }
    for (int64_t y = 0; y < oh; ++y) {
      const ResampleTap& tap = taps_y[static_cast<size_t>(y)];
      for (int64_t x = 0; x < ow; ++x) {
        double acc = 0;
        for (size_t k = 0; k < tap.index.size(); ++k)
          acc += tap.weight[k] * row_pass[static_cast<size_t>(tap.index[k] * ow + x)];
        dst[p * oh * ow + y * ow + x] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> rot90_ccw(const Tensor<T>& chw) {
  int64_t c = chw.size(0), h = chw.size(1), w = chw.size(2);
  Tensor<T> out({c, w, h});
  auto src = chw.data();
  auto dst = out.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < w; ++i)
      for (int64_t j = 0; j < h; ++j)
        dst[(ci * w + i) * h + j] = src[(ci * h + j) * w + (w - 1 - i)];
  return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& chw) {
  int64_t c = chw.size(0), h = chw.size(1), w = chw.size(2);
  Tensor<T> out(chw.shape());
  auto src = chw.data();
  auto dst = out.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        dst[(ci * h + y) * w + x] = src[(ci * h + y) * w + (w - 1 - x)];
  return out;
}

}  // namespace

template <typename T>
Tensor<T> apply_augment(const Tensor<T>& chw, AugmentOp op) {
  FGM_CHECK(chw.rank() == 3, "apply_augment expects (C, H, W)");
  switch (op) {
    case AugmentOp::kNone: return chw.clone();
    case AugmentOp::kHFlip: return hflip(chw);
    case AugmentOp::kRot90: return rot90_ccw(chw);
    case AugmentOp::kRot180: return rot90_ccw(rot90_ccw(chw));
    case AugmentOp::kRot270: return rot90_ccw(rot90_ccw(rot90_ccw(chw)));
  }
  fail("apply_augment: bad op");
}

namespace {

const char* augment_name(AugmentOp op) {
  switch (op) {
    case AugmentOp::kNone: return "none";
    case AugmentOp::kHFlip: return "hflip";
    case AugmentOp::kRot90: return "rot90";
    case AugmentOp::kRot180: return "rot180";
    case AugmentOp::kRot270: return "rot270";
  }
  return "?";
}

}  // namespace

TrainSample augment(const TrainSample& sample, AugmentOp op) {
  TrainSample out = sample;
  out.hr = apply_augment(sample.hr, op);
  out.lr = apply_augment(sample.lr, op);
  if (op != AugmentOp::kNone)
    out.augment_tag = sample.augment_tag == "none" ? augment_name(op)
                                                   : sample.augment_tag + "+" + augment_name(op);
  return out;
}

std::string format_metric(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

namespace {

Tensor<float> crop_chw(const Tensor<float>& img, int64_t y0, int64_t x0, int64_t ph,
                       int64_t pw) {
  int64_t c = img.size(0), h = img.size(1), w = img.size(2);
  Tensor<float> out({c, ph, pw});
  auto src = img.data();
  auto dst = out.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < ph; ++y)
      std::copy_n(src.begin() + (ci * h + y0 + y) * w + x0, pw,
                  dst.begin() + (ci * ph + y) * pw);
  return out;
}

Tensor<float> stack_batch(const std::vector<Tensor<float>>& chw) {
  int64_t b = static_cast<int64_t>(chw.size());
  int64_t c = chw[0].size(0), h = chw[0].size(1), w = chw[0].size(2);
  Tensor<float> out({b, c, h, w});
  auto dst = out.data();
  for (int64_t i = 0; i < b; ++i) {
    FGM_CHECK(chw[static_cast<size_t>(i)].shape() == chw[0].shape(),
              "stack_batch: ragged batch");
    std::copy_n(chw[static_cast<size_t>(i)].data().begin(), c * h * w, dst.begin() + i * c * h * w);
  }
  return out;
}

}  // namespace

TrainResult train_loop(FgMamba<float>& model, const std::vector<Tensor<float>>& hr_images,
                       int64_t scale, const TrainOptions& opts, std::ostream* echo) {
  FGM_CHECK(!hr_images.empty(), "train_loop: empty dataset");
  FGM_CHECK(scale == model.config().scale, "train_loop: scale does not match model config");

  // Crop HR images down to exact multiples of scale, then synthesize LR.
  std::vector<Tensor<float>> hr, lr;
  for (const auto& img : hr_images) {
    FGM_CHECK(img.rank() == 3, "train_loop: images must be (C, H, W)");
    int64_t h = img.size(1) - img.size(1) % scale;
    int64_t w = img.size(2) - img.size(2) % scale;
    FGM_CHECK(h >= 8 * scale && w >= 8 * scale, "train_loop: image too small for this scale");
    Tensor<float> cropped = crop_chw(img, 0, 0, h, w);
    hr.push_back(cropped);
    lr.push_back(bicubic_downsample(cropped, scale));
  }

  int64_t patch_lr = std::max<int64_t>(8, opts.patch_hr / scale);
  for (const auto& img : lr) {
    patch_lr = std::min(patch_lr, img.size(1));
    patch_lr = std::min(patch_lr, img.size(2));
  }

  std::vector<std::pair<std::string, Tensor<float>*>> params;
  model.for_each_param(
      [&](const std::string& name, Tensor<float>& t) { params.emplace_back(name, &t); });

  Adam<float> adam({opts.lr, opts.beta1, opts.beta2, 1e-8});
  Rng rng(opts.seed);
  TrainResult result;

  auto validate = [&]() {
    Tensor<float> sr = model.forward(reshape(lr[0], {1, lr[0].size(0), lr[0].size(1), lr[0].size(2)}));
    Tensor<float> ref = reshape(hr[0], {1, hr[0].size(0), hr[0].size(1), hr[0].size(2)});
    result.final_psnr = psnr(sr, ref, 1.0);
    result.final_ssim = ssim(sr, ref, 1.0);
  };

  for (int64_t step = 0; step < opts.steps; ++step) {
    std::vector<Tensor<float>> lr_patches, hr_patches;
    lr_patches.reserve(static_cast<size_t>(opts.batch));
    hr_patches.reserve(static_cast<size_t>(opts.batch));
    for (int64_t i = 0; i < opts.batch; ++i) {
      int64_t img = rng.uniform_int(static_cast<int64_t>(hr.size()));
      const auto& l = lr[static_cast<size_t>(img)];
      int64_t oy = rng.uniform_int(l.size(1) - patch_lr + 1);
      int64_t ox = rng.uniform_int(l.size(2) - patch_lr + 1);
      TrainSample s;
      s.image_id = img;
      s.crop_y = oy * scale;
      s.crop_x = ox * scale;
      s.lr = crop_chw(l, oy, ox, patch_lr, patch_lr);
      s.hr = crop_chw(hr[static_cast<size_t>(img)], oy * scale, ox * scale, patch_lr * scale,
                      patch_lr * scale);
      if (opts.augment) {
        bool flip = rng.uniform_int(2) == 1;
        int64_t quarter = rng.uniform_int(4);
        if (flip) s = augment(s, AugmentOp::kHFlip);
        static const AugmentOp rots[] = {AugmentOp::kNone, AugmentOp::kRot90,
                                         AugmentOp::kRot180, AugmentOp::kRot270};
        s = augment(s, rots[quarter]);
      }
      lr_patches.push_back(s.lr);
      hr_patches.push_back(s.hr);
    }
    Tensor<float> lr_batch = stack_batch(lr_patches);
    Tensor<float> hr_batch = stack_batch(hr_patches);

    Tape<float> tape;
    double loss_value;
    {
      TapeScope<float> scope(tape);
      Tensor<float> pred = model.forward(lr_batch);
      Tensor<float> loss = l1_loss(pred, hr_batch);
      loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        result.diverged = true;
        result.final_loss = loss_value;
        std::string line = "step=" + std::to_string(step) + " loss=nan diverged=1";
        result.log_lines.push_back(line);
        if (echo) *echo << line << '\n';
        return result;
      }
      tape.backward(loss);
    }
    adam.step(params);
    model.drop_grads();

    result.final_loss = loss_value;
    result.steps_run = step + 1;
    std::string line = "step=" + std::to_string(step) + " loss=" + format_metric(loss_value);
    bool do_val = (opts.val_every > 0 && (step + 1) % opts.val_every == 0) ||
                  step + 1 == opts.steps;
    if (do_val) {
      validate();
      line += " psnr=" + format_metric(result.final_psnr) +
              " ssim=" + format_metric(result.final_ssim);
    }
    result.log_lines.push_back(line);
    if (echo) *echo << line << '\n';
  }
  if (opts.steps == 0) validate();
  return result;
}

#define FGM_INSTANTIATE_TRAINING(T)                                             \
  template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);            \
  template class Adam<T>;                                                       \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double);          \
  template double ssim<T>(const Tensor<T>&, const Tensor<T>&, double);          \
  template Tensor<T> bicubic_downsample<T>(const Tensor<T>&, int64_t);          \
  template Tensor<T> apply_augment<T>(const Tensor<T>&, AugmentOp);

FGM_INSTANTIATE_TRAINING(float)
FGM_INSTANTIATE_TRAINING(double)
#undef FGM_INSTANTIATE_TRAINING

}  // namespace fgmamba
