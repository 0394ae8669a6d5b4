#include "fgmamba/spectral.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace fgmamba {

namespace {

using cd = std::complex<double>;

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 Cooley-Tukey; sign = -1 forward, +1 inverse
// (unnormalized either way).
void fft_pow2(std::vector<cd>& a, int sign) {
  const size_t n = a.size();
  if (n <= 1) return;
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    cd wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        cd u = a[i + j];
        cd v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Bluestein chirp-z for arbitrary length. Exact integer phase bookkeeping:
// k^2 mod 2n keeps the chirp angles accurate for long transforms.
void fft_bluestein(std::vector<cd>& a, int sign) {
  const int64_t n = static_cast<int64_t>(a.size());
  if (n <= 1) return;
  const int64_t m = next_pow2(2 * n - 1);
  std::vector<cd> chirp(static_cast<size_t>(n));
  for (int64_t k = 0; k < n; ++k) {
    int64_t sq = (k * k) % (2 * n);
    double ang = sign * std::numbers::pi * static_cast<double>(sq) / static_cast<double>(n);
    chirp[static_cast<size_t>(k)] = cd(std::cos(ang), std::sin(ang));
  }
  std::vector<cd> f(static_cast<size_t>(m), cd(0, 0));
  std::vector<cd> g(static_cast<size_t>(m), cd(0, 0));
  for (int64_t k = 0; k < n; ++k) f[static_cast<size_t>(k)] = a[static_cast<size_t>(k)] * chirp[static_cast<size_t>(k)];
  for (int64_t k = 0; k < n; ++k) {
    cd c = std::conj(chirp[static_cast<size_t>(k)]);
    g[static_cast<size_t>(k)] = c;
    if (k != 0) g[static_cast<size_t>(m - k)] = c;
  }
  fft_pow2(f, -1);
  fft_pow2(g, -1);
  for (int64_t i = 0; i < m; ++i) f[static_cast<size_t>(i)] *= g[static_cast<size_t>(i)];
  fft_pow2(f, +1);
  double inv_m = 1.0 / static_cast<double>(m);
  for (int64_t k = 0; k < n; ++k)
    a[static_cast<size_t>(k)] = f[static_cast<size_t>(k)] * inv_m * chirp[static_cast<size_t>(k)];
}

void fft_1d(std::vector<cd>& a, int sign) {
  if (is_pow2(static_cast<int64_t>(a.size())))
    fft_pow2(a, sign);
  else
    fft_bluestein(a, sign);
}

// Unnormalized 2D transform over a row-major complex buffer.
void fft_2d(std::vector<cd>& buf, int64_t h, int64_t w, int sign) {
  std::vector<cd> line;
  line.resize(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    std::copy_n(buf.begin() + y * w, w, line.begin());
    fft_1d(line, sign);
    std::copy_n(line.begin(), w, buf.begin() + y * w);
  }
  line.resize(static_cast<size_t>(h));
  for (int64_t x = 0; x < w; ++x) {
    for (int64_t y = 0; y < h; ++y) line[static_cast<size_t>(y)] = buf[static_cast<size_t>(y * w + x)];
    fft_1d(line, sign);
    for (int64_t y = 0; y < h; ++y) buf[static_cast<size_t>(y * w + x)] = line[static_cast<size_t>(y)];
  }
}

// Fixed-mask high-pass filter on one plane: real(ifft2(mask . fft2(x))).
// This linear map is symmetric, so it is reused verbatim in the backward
// pass.
void filter_plane_fixed_mask(const double* src, double* dst, const FreqMask& mask) {
  int64_t h = mask.h, w = mask.w, n = h * w;
  std::vector<cd> buf(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = cd(src[i], 0.0);
  fft_2d(buf, h, w, -1);
  for (int64_t i = 0; i < n; ++i)
    if (!mask.keep[static_cast<size_t>(i)]) buf[static_cast<size_t>(i)] = cd(0, 0);
  fft_2d(buf, h, w, +1);
  double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) dst[i] = buf[static_cast<size_t>(i)].real() * inv_n;
}

// Strict-inequality threshold with a few-ULP guard: magnitudes that tie with
// the mean in exact arithmetic (impulse planes, degenerate spectra) must not
// flip on transform rounding noise.
bool above_mean(double mag, double mean_mag) {
  return mag > mean_mag * (1.0 + 1e-12);
}

FreqMask mask_of_plane(const double* src, int64_t h, int64_t w) {
  int64_t n = h * w;
  std::vector<cd> buf(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = cd(src[i], 0.0);
  fft_2d(buf, h, w, -1);
  double mean_mag = 0;
  std::vector<double> mag(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    mag[static_cast<size_t>(i)] = std::abs(buf[static_cast<size_t>(i)]);
    mean_mag += mag[static_cast<size_t>(i)];
  }
  mean_mag /= static_cast<double>(n);
  FreqMask m;
  m.h = h;
  m.w = w;
  m.keep.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    m.keep[static_cast<size_t>(i)] = above_mean(mag[static_cast<size_t>(i)], mean_mag) ? 1 : 0;
  return m;
}

template <typename T>
bool spectral_grad_needed(const Tensor<T>& x) {
  return Tape<T>::active() && x.requires_grad();
}

}  // namespace

double ComplexSpectrum::magnitude(int64_t idx) const {
  return std::hypot(re[static_cast<size_t>(idx)], im[static_cast<size_t>(idx)]);
}

template <typename T>
ComplexSpectrum fft2(const Tensor<T>& plane) {
  FGM_CHECK(plane.rank() == 2, "fft2 expects a rank-2 plane, got " + shape_str(plane.shape()));
  int64_t h = plane.size(0), w = plane.size(1);
  FGM_CHECK(h >= 1 && w >= 1, "fft2: empty plane");
  std::vector<cd> buf(static_cast<size_t>(h * w));
  auto src = plane.data();
  for (int64_t i = 0; i < h * w; ++i) buf[static_cast<size_t>(i)] = cd(static_cast<double>(src[i]), 0.0);
  fft_2d(buf, h, w, -1);
  ComplexSpectrum out;
  out.h = h;
  out.w = w;
  out.re.resize(static_cast<size_t>(h * w));
  out.im.resize(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i) {
    out.re[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)].real();
    out.im[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)].imag();
  }
  return out;
}

template <typename T>
Tensor<T> ifft2(const ComplexSpectrum& spec) {
  int64_t h = spec.h, w = spec.w, n = h * w;
  FGM_CHECK(n >= 1, "ifft2: empty spectrum");
  std::vector<cd> buf(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    buf[static_cast<size_t>(i)] = cd(spec.re[static_cast<size_t>(i)], spec.im[static_cast<size_t>(i)]);
  fft_2d(buf, h, w, +1);
  Tensor<T> out({h, w});
  auto dst = out.data();
  double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<T>(buf[static_cast<size_t>(i)].real() * inv_n);
  return out;
}

FreqMask highfreq_mask(const ComplexSpectrum& spec) {
  int64_t n = spec.numel();
  FGM_CHECK(n >= 1, "highfreq_mask: empty spectrum");
  double mean_mag = 0;
  for (int64_t i = 0; i < n; ++i) mean_mag += spec.magnitude(i);
  mean_mag /= static_cast<double>(n);
  FreqMask m;
  m.h = spec.h;
  m.w = spec.w;
  m.keep.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    m.keep[static_cast<size_t>(i)] = above_mean(spec.magnitude(i), mean_mag) ? 1 : 0;
  return m;
}

template <typename T>
Tensor<T> highfreq_extract(const Tensor<T>& x) {
  FGM_CHECK(x.rank() == 2 || x.rank() == 4,
            "highfreq_extract expects rank-2 or rank-4, got " + shape_str(x.shape()));
  int64_t h = x.size(x.rank() - 2), w = x.size(x.rank() - 1);
  int64_t planes = x.numel() / (h * w);
  Tensor<T> out(x.shape());
  auto masks = std::make_shared<std::vector<FreqMask>>();
  masks->reserve(static_cast<size_t>(planes));
  auto xv = x.data();
  auto ov = out.data();
  std::vector<double> src(static_cast<size_t>(h * w));
  std::vector<double> dst(static_cast<size_t>(h * w));
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t i = 0; i < h * w; ++i) src[static_cast<size_t>(i)] = static_cast<double>(xv[p * h * w + i]);
    FreqMask mask = mask_of_plane(src.data(), h, w);
    filter_plane_fixed_mask(src.data(), dst.data(), mask);
    for (int64_t i = 0; i < h * w; ++i) ov[p * h * w + i] = static_cast<T>(dst[static_cast<size_t>(i)]);
    masks->push_back(std::move(mask));
  }
  if (spectral_grad_needed(x)) {
    Tensor<T> xc = x, oc = out;
    oc.set_requires_grad(true);
    Tape<T>::active()->record([xc, oc, masks, planes, h, w]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto gx = xc.grad_mut();
      std::vector<double> src(static_cast<size_t>(h * w));
      std::vector<double> dst(static_cast<size_t>(h * w));
      for (int64_t p = 0; p < planes; ++p) {
        for (int64_t i = 0; i < h * w; ++i) src[static_cast<size_t>(i)] = static_cast<double>(g[p * h * w + i]);
        filter_plane_fixed_mask(src.data(), dst.data(), (*masks)[static_cast<size_t>(p)]);
        for (int64_t i = 0; i < h * w; ++i) gx[p * h * w + i] += static_cast<T>(dst[static_cast<size_t>(i)]);
      }
    });
    return oc;
  }
  return out;
}

template ComplexSpectrum fft2<float>(const Tensor<float>&);
template ComplexSpectrum fft2<double>(const Tensor<double>&);
template Tensor<float> ifft2<float>(const ComplexSpectrum&);
template Tensor<double> ifft2<double>(const ComplexSpectrum&);
template Tensor<float> highfreq_extract<float>(const Tensor<float>&);
template Tensor<double> highfreq_extract<double>(const Tensor<double>&);

}  // namespace fgmamba
