#include <doctest.h>

#include <sstream>

#include "fgmamba/training.hpp"
#include "test_util.hpp"

using namespace fgmamba;
using namespace fgmamba::testutil;

namespace {

// Independently coded reference Adam on a scalar trajectory.
std::vector<double> reference_adam_on_quadratic(double theta0, double lr, int steps) {
  double theta = theta0, m = 0, v = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> history;
  for (int t = 1; t <= steps; ++t) {
    double g = 2.0 * theta;  // d/dtheta theta^2
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
    history.push_back(theta);
  }
  return history;
}

Tensor<float> smooth_image(int64_t h, int64_t w) {
  Tensor<float> img({1, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double fy = static_cast<double>(y) / static_cast<double>(h);
      double fx = static_cast<double>(x) / static_cast<double>(w);
      double v = 0.5 + 0.22 * std::sin(2.0 * std::numbers::pi * (fy + 0.3)) +
                 0.18 * std::cos(2.0 * std::numbers::pi * (1.7 * fx + 0.1)) + 0.08 * fy * fx;
      img.data()[y * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return img;
}

}  // namespace

TEST_CASE("l1_loss: fixed points and the analytic subgradient") {
  Tensor<double> a = Tensor<double>::from_data({4}, {1, 2, 3, 4});
  CHECK(l1_loss(a, a).item() == 0.0);

  Tensor<double> zeros = Tensor<double>::zeros({2, 3});
  Tensor<double> ones = Tensor<double>::full({2, 3}, 1.0);
  CHECK(l1_loss(zeros, ones).item() == doctest::Approx(1.0));

  Rng rng(91);
  Tensor<double> pred = random_tensor({3, 5}, rng);
  Tensor<double> target = random_tensor({3, 5}, rng);
  pred.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Tensor<double> loss = l1_loss(pred, target);
    tape.backward(loss);
  }
  for (int64_t i = 0; i < 15; ++i) {
    double d = pred.data()[i] - target.data()[i];
    double expect = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / 15.0;
    CHECK(pred.grad()[i] == doctest::Approx(expect));
  }
  CHECK_THROWS(l1_loss(pred, Tensor<double>::zeros({4})));
}

TEST_CASE("adam: first step moves by about -lr * sign(g); zero grads freeze parameters") {
  Tensor<double> theta = Tensor<double>::from_data({2}, {0.3, -0.7});
  theta.set_requires_grad(true);
  theta.grad_mut()[0] = 4.0;
  theta.grad_mut()[1] = -0.02;
  Adam<double> adam({1e-3, 0.9, 0.999, 1e-8});
  adam.step({{"theta", &theta}});
  CHECK(theta.data()[0] == doctest::Approx(0.3 - 1e-3).epsilon(1e-6));
  CHECK(theta.data()[1] == doctest::Approx(-0.7 + 1e-3).epsilon(1e-4));

  Tensor<double> frozen = Tensor<double>::from_data({2}, {1.0, 2.0});
  frozen.set_requires_grad(true);
  frozen.grad_mut();  // zero-filled
  Adam<double> adam2({1e-2, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 50; ++i) adam2.step({{"frozen", &frozen}});
  CHECK(frozen.data()[0] == 1.0);
  CHECK(frozen.data()[1] == 2.0);

  Tensor<double> no_grad = Tensor<double>::from_data({1}, {1.0});
  CHECK_THROWS(adam2.step({{"no_grad", &no_grad}}));  // missing gradient
}

TEST_CASE("adam: 100 steps on theta^2 match the reference trajectory within 1e-10") {
  Tensor<double> theta = Tensor<double>::from_data({1}, {1.0});
  theta.set_requires_grad(true);
  Adam<double> adam({0.05, 0.9, 0.999, 1e-8});
  auto reference = reference_adam_on_quadratic(1.0, 0.05, 100);
  for (int t = 0; t < 100; ++t) {
    Tape<double> tape;
    {
      TapeScope<double> scope(tape);
      Tensor<double> loss = sum_all(mul(theta, theta));
      tape.backward(loss);
    }
    adam.step({{"theta", &theta}});
    theta.drop_grad();
    CHECK(std::abs(theta.data()[0] - reference[static_cast<size_t>(t)]) < 1e-10);
  }
}

TEST_CASE("adam: one step strictly decreases a convex quadratic for small lr") {
  Tensor<double> theta = Tensor<double>::from_data({3}, {0.9, -1.2, 0.4});
  theta.set_requires_grad(true);
  auto loss_value = [&]() {
    double acc = 0;
    for (double v : theta.data()) acc += v * v;
    return acc;
  };
  double before = loss_value();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Tensor<double> loss = sum_all(mul(theta, theta));
    tape.backward(loss);
  }
  Adam<double> adam({1e-3, 0.9, 0.999, 1e-8});
  adam.step({{"theta", &theta}});
  CHECK(loss_value() < before);
}

TEST_CASE("psnr: identical, formula, and oracle") {
  Tensor<double> a = Tensor<double>::full({2, 8, 8}, 0.5);
  CHECK(std::isinf(psnr(a, a, 1.0)));

  // MSE 0.01 at peak 1 -> 20 dB
  Tensor<double> b = Tensor<double>::full({2, 8, 8}, 0.4);
  CHECK(psnr(a, b, 1.0) == doctest::Approx(20.0).epsilon(1e-9));

  Rng rng(92);
  Tensor<double> x = random_tensor({1, 12, 12}, rng, 0.0, 1.0);
  Tensor<double> y = random_tensor({1, 12, 12}, rng, 0.0, 1.0);
  double mse = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = x.data()[i] - y.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  CHECK(psnr(x, y, 1.0) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
  CHECK_THROWS(psnr(x, Tensor<double>::zeros({2, 2}), 1.0));
}

TEST_CASE("ssim: identical images, zero-variance closed form, window size guard") {
  Rng rng(93);
  Tensor<double> x = random_tensor({1, 16, 16}, rng, 0.0, 1.0);
  CHECK(ssim(x, x, 1.0) == doctest::Approx(1.0).epsilon(1e-9));

  Tensor<double> zeros = Tensor<double>::zeros({1, 12, 12});
  Tensor<double> ones = Tensor<double>::full({1, 12, 12}, 1.0);
  double c1 = 1e-4;
  CHECK(ssim(zeros, ones, 1.0) == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-9));

  CHECK_THROWS(ssim(Tensor<double>::zeros({1, 8, 8}), Tensor<double>::zeros({1, 8, 8}), 1.0));
}

TEST_CASE("ssim: matches a direct sliding-window oracle") {
  Rng rng(94);
  Tensor<double> a = random_tensor({1, 14, 13}, rng, 0.0, 1.0);
  Tensor<double> b = random_tensor({1, 14, 13}, rng, 0.0, 1.0);
  double got = ssim(a, b, 1.0);

  // naive 2D windows, no separability
  std::vector<double> win(121);
  double sum = 0;
  for (int64_t y = 0; y < 11; ++y)
    for (int64_t x = 0; x < 11; ++x) {
      double dy = y - 5.0, dx = x - 5.0;
      win[static_cast<size_t>(y * 11 + x)] = std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5));
      sum += win[static_cast<size_t>(y * 11 + x)];
    }
  for (double& v : win) v /= sum;
  double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int64_t count = 0;
  for (int64_t oy = 0; oy + 11 <= 14; ++oy)
    for (int64_t ox = 0; ox + 11 <= 13; ++ox) {
      double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
      for (int64_t y = 0; y < 11; ++y)
        for (int64_t x = 0; x < 11; ++x) {
          double wv = win[static_cast<size_t>(y * 11 + x)];
          double av = a.data()[(oy + y) * 13 + ox + x];
          double bv = b.data()[(oy + y) * 13 + ox + x];
          ma += wv * av;
          mb += wv * bv;
          maa += wv * av * av;
          mbb += wv * bv * bv;
          mab += wv * av * bv;
        }
      double va = maa - ma * ma, vb = mbb - mb * mb, cov = mab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  CHECK(got == doctest::Approx(total / count).epsilon(1e-6));
}

TEST_CASE("bicubic_downsample: constants, identity, and the dense-kernel oracle") {
  Tensor<double> c = Tensor<double>::full({1, 8, 8}, 0.77);
  Tensor<double> down = bicubic_downsample(c, 2);
  CHECK(down.shape() == Shape{1, 4, 4});
  for (double v : down.data()) CHECK(v == doctest::Approx(0.77).epsilon(1e-12));

  Rng rng(95);
  Tensor<double> x = random_tensor({1, 6, 6}, rng);
  CHECK(max_abs_diff(bicubic_downsample(x, 1), x) < 1e-6);

  // horizontal linear ramp downsampled by 2, against a dense summation oracle
  int64_t h = 8, w = 16;
  Tensor<double> ramp({1, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t xx = 0; xx < w; ++xx) ramp.data()[y * w + xx] = static_cast<double>(xx);
  Tensor<double> got = bicubic_downsample(ramp, 2);
  auto cubic = [](double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
    if (t < 2) return a * (t * t * t - 5 * t * t + 8 * t - 4);
    return 0.0;
  };
  auto fold = [](int64_t i, int64_t n) {
    int64_t p = 2 * n, m = ((i % p) + p) % p;
    return m < n ? m : p - 1 - m;
  };
  for (int64_t ox = 0; ox < w / 2; ++ox) {
    double center = (ox + 0.5) * 2 - 0.5;
    double acc = 0, norm = 0;
    for (int64_t j = static_cast<int64_t>(std::ceil(center - 4));
         j <= static_cast<int64_t>(std::floor(center + 4)); ++j) {
      double wgt = cubic((j - center) / 2.0);
      acc += wgt * ramp.data()[fold(j, w)];
      norm += wgt;
    }
    CHECK(got.data()[2 * (w / 2) + ox] == doctest::Approx(acc / norm).epsilon(1e-6));
  }

  CHECK_THROWS(bicubic_downsample(Tensor<double>::zeros({1, 7, 8}), 2));  // non-divisible
}

TEST_CASE("augment: group relations hold bit-exactly") {
  Rng rng(96);
  TrainSample s;
  s.hr = Tensor<float>::uniform({1, 8, 12}, rng, 0.0, 1.0);
  s.lr = Tensor<float>::uniform({1, 4, 6}, rng, 0.0, 1.0);

  TrainSample r = augment(augment(augment(augment(s, AugmentOp::kRot90), AugmentOp::kRot90),
                                  AugmentOp::kRot90),
                          AugmentOp::kRot90);
  CHECK(max_abs_diff(r.hr.cast<double>(), s.hr.cast<double>()) == 0.0);
  CHECK(max_abs_diff(r.lr.cast<double>(), s.lr.cast<double>()) == 0.0);

  TrainSample f2 = augment(augment(s, AugmentOp::kHFlip), AugmentOp::kHFlip);
  CHECK(max_abs_diff(f2.hr.cast<double>(), s.hr.cast<double>()) == 0.0);

  TrainSample r2 = augment(augment(s, AugmentOp::kRot180), AugmentOp::kRot180);
  CHECK(max_abs_diff(r2.hr.cast<double>(), s.hr.cast<double>()) == 0.0);

  // rot90 twice == rot180
  TrainSample a = augment(augment(s, AugmentOp::kRot90), AugmentOp::kRot90);
  TrainSample b = augment(s, AugmentOp::kRot180);
  CHECK(max_abs_diff(a.hr.cast<double>(), b.hr.cast<double>()) == 0.0);
}

TEST_CASE("augment: transforms commute with bicubic downsampling") {
  Rng rng(97);
  Tensor<float> hr = Tensor<float>::uniform({1, 16, 24}, rng, 0.0, 1.0);
  for (AugmentOp op : {AugmentOp::kHFlip, AugmentOp::kRot90, AugmentOp::kRot180,
                       AugmentOp::kRot270}) {
    Tensor<float> down_then_aug = apply_augment(bicubic_downsample(hr, 2), op);
    Tensor<float> aug_then_down = bicubic_downsample(apply_augment(hr, op), 2);
    CHECK(max_abs_diff(down_then_aug.cast<double>(), aug_then_down.cast<double>()) < 1e-6);
  }
}

TEST_CASE("train_loop: zero lr leaves parameters untouched; empty dataset rejected") {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.n_fgblocks = 1;
  cfg.n_gasm_per_block = 1;
  cfg.state_dim = 4;
  FgMamba<float> model(cfg, 7);
  std::vector<float> before;
  model.for_each_param([&](const std::string&, Tensor<float>& t) {
    before.insert(before.end(), t.data().begin(), t.data().end());
  });

  TrainOptions opts;
  opts.steps = 3;
  opts.batch = 1;
  opts.lr = 0.0;
  opts.val_every = 0;
  std::vector<Tensor<float>> data = {smooth_image(32, 32)};
  TrainResult result = train_loop(model, data, 2, opts);
  CHECK(result.steps_run == 3);

  std::vector<float> after;
  model.for_each_param([&](const std::string&, Tensor<float>& t) {
    after.insert(after.end(), t.data().begin(), t.data().end());
  });
  CHECK(before == after);

  std::vector<Tensor<float>> empty;
  CHECK_THROWS(train_loop(model, empty, 2, opts));
}

TEST_CASE("train_loop: seeded runs produce bit-identical metric logs") {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.n_fgblocks = 1;
  cfg.n_gasm_per_block = 1;
  cfg.state_dim = 4;
  TrainOptions opts;
  opts.steps = 5;
  opts.batch = 2;
  opts.seed = 123;
  opts.augment = true;
  opts.val_every = 2;
  std::vector<Tensor<float>> data = {smooth_image(40, 40)};

  FgMamba<float> m1(cfg, 123), m2(cfg, 123);
  TrainResult r1 = train_loop(m1, data, 2, opts);
  TrainResult r2 = train_loop(m2, data, 2, opts);
  REQUIRE(r1.log_lines.size() == r2.log_lines.size());
  for (size_t i = 0; i < r1.log_lines.size(); ++i) CHECK(r1.log_lines[i] == r2.log_lines[i]);

  // identical parameter bytes after N steps
  std::vector<float> p1, p2;
  m1.for_each_param([&](const std::string&, Tensor<float>& t) {
    p1.insert(p1.end(), t.data().begin(), t.data().end());
  });
  m2.for_each_param([&](const std::string&, Tensor<float>& t) {
    p2.insert(p2.end(), t.data().begin(), t.data().end());
  });
  CHECK(p1 == p2);
}

TEST_CASE("train_loop: loss decreases over a short smooth-image run") {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.n_fgblocks = 1;
  cfg.n_gasm_per_block = 1;
  cfg.state_dim = 4;
  FgMamba<float> model(cfg, 21);
  TrainOptions opts;
  opts.steps = 40;
  opts.batch = 1;
  opts.seed = 21;
  opts.val_every = 0;
  std::vector<Tensor<float>> data = {smooth_image(32, 32)};
  TrainResult result = train_loop(model, data, 2, opts);
  REQUIRE(result.log_lines.size() == 40);
  // compare mean loss of the first and last five steps
  auto loss_of = [](const std::string& line) {
    auto pos = line.find("loss=");
    return std::stod(line.substr(pos + 5));
  };
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += loss_of(result.log_lines[static_cast<size_t>(i)]);
    last += loss_of(result.log_lines[result.log_lines.size() - 1 - static_cast<size_t>(i)]);
  }
  CHECK(last < first);
}
