#include <doctest.h>

#include "test_util.hpp"

using namespace fgmamba;
using namespace fgmamba::testutil;

namespace {

// Independent six-nested-loop cross-correlation oracle.
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& bias, int64_t stride, int64_t pad,
                             int64_t groups) {
  int64_t B = x.size(0), Cin = x.size(1), H = x.size(2), W = x.size(3);
  int64_t Cout = w.size(0), kh = w.size(2), kw = w.size(3);
  int64_t cg_in = Cin / groups, cg_out = Cout / groups;
  int64_t OH = (H + 2 * pad - kh) / stride + 1;
  int64_t OW = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> out({B, Cout, OH, OW});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oc = 0; oc < Cout; ++oc)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double acc = bias.data()[oc];
          for (int64_t ic = 0; ic < cg_in; ++ic)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy * stride - pad + ky;
                int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                int64_t in_ch = (oc / cg_out) * cg_in + ic;
                acc += x.data()[((b * Cin + in_ch) * H + iy) * W + ix] *
                       w.data()[((oc * cg_in + ic) * kh + ky) * kw + kx];
              }
          out.data()[((b * Cout + oc) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

Tensor<double> pixel_unshuffle_oracle(const Tensor<double>& x, int64_t r) {
  int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  Tensor<double> out({B, C * r * r, H / r, W / r});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x2 = 0; x2 < W; ++x2)
          out.data()[((b * C * r * r + c * r * r + (y % r) * r + (x2 % r)) * (H / r) + y / r) *
                         (W / r) +
                     x2 / r] = x.data()[((b * C + c) * H + y) * W + x2];
  return out;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 kernel tap counts") {
  Tensor<double> x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  ConvParams<double> p;
  p.weight = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  p.bias = Tensor<double>::zeros({1});
  p.padding = 1;
  Tensor<double> y = conv2d(x, p);
  CHECK(y.data()[4] == doctest::Approx(9.0));  // center
  CHECK(y.data()[0] == doctest::Approx(4.0));  // corners
  CHECK(y.data()[2] == doctest::Approx(4.0));
  CHECK(y.data()[6] == doctest::Approx(4.0));
  CHECK(y.data()[8] == doctest::Approx(4.0));
}

TEST_CASE("conv2d: Dirac kernel is the identity") {
  Rng rng(1);
  Tensor<double> x = random_tensor({2, 3, 5, 6}, rng);
  ConvParams<double> p;
  p.weight = Tensor<double>::zeros({3, 3, 3, 3});
  for (int64_t c = 0; c < 3; ++c) p.weight.data()[(c * 3 + c) * 9 + 4] = 1.0;
  p.bias = Tensor<double>::zeros({3});
  p.padding = 1;
  CHECK(max_abs_diff(conv2d(x, p), x) == 0.0);
}

TEST_CASE("conv2d: grouped random instance matches the nested-loop oracle") {
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor<double> x = random_tensor({2, 4, 8, 8}, rng);
    ConvParams<double> p;
    p.weight = random_tensor({6, 2, 3, 3}, rng);
    p.bias = random_tensor({6}, rng);
    p.padding = 1;
    p.groups = 2;
    CHECK(max_rel_diff(conv2d(x, p), conv2d_oracle(x, p.weight, p.bias, 1, 1, 2)) < 1e-6);
  }
}

TEST_CASE("conv2d: error paths") {
  Rng rng(3);
  Tensor<double> x = random_tensor({1, 4, 4, 4}, rng);
  ConvParams<double> p;
  p.weight = random_tensor({4, 3, 3, 3}, rng);  // expects 3-channel input per group
  p.bias = Tensor<double>::zeros({4});
  CHECK_THROWS(conv2d(x, p));  // channel mismatch
  ConvParams<double> q;
  q.weight = random_tensor({3, 4, 3, 3}, rng);
  q.bias = Tensor<double>::zeros({3});
  q.groups = 2;  // 3 % 2 != 0
  CHECK_THROWS(conv2d(x, q));
}

TEST_CASE("conv2d: gradients match central differences (step 1e-3, double)") {
  Rng rng(4);
  Tensor<double> x = random_tensor({1, 2, 5, 5}, rng);
  ConvParams<double> p;
  p.weight = random_tensor({3, 2, 3, 3}, rng);
  p.bias = random_tensor({3}, rng);
  p.padding = 1;
  auto fwd = [&]() { return conv2d(x, p); };
  CHECK(fd_gradcheck(p.weight, fwd, rng, 1e-3) < 1e-3);
  CHECK(fd_gradcheck(p.bias, fwd, rng, 1e-3) < 1e-3);
  CHECK(fd_gradcheck(x, fwd, rng, 1e-3) < 1e-3);
}

TEST_CASE("layer_norm: constant input normalizes to zero") {
  Tensor<double> x = Tensor<double>::full({1, 4, 2, 2}, 3.7);
  LayerNormParams<double> p = LayerNormParams<double>::create(4);
  Tensor<double> y = layer_norm(x, p, 1e-6);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("layer_norm: already-normalized two-channel pixel stays put") {
  Tensor<double> x = Tensor<double>::from_data({1, 2, 1, 1}, {1.0, -1.0});
  LayerNormParams<double> p = LayerNormParams<double>::create(2);
  Tensor<double> y = layer_norm(x, p, 1e-6);
  CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("layer_norm: random input matches per-pixel statistics oracle") {
  Rng rng(5);
  Tensor<double> x = random_tensor({2, 5, 3, 4}, rng);
  Tensor<double> gain = random_tensor({5}, rng);
  Tensor<double> bias = random_tensor({5}, rng);
  double eps = 1e-6;
  Tensor<double> y = layer_norm(x, gain, bias, eps);
  int64_t C = 5, HW = 12;
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t j = 0; j < HW; ++j) {
      double mean = 0, var = 0;
      for (int64_t c = 0; c < C; ++c) mean += x.data()[(b * C + c) * HW + j];
      mean /= C;
      for (int64_t c = 0; c < C; ++c) {
        double d = x.data()[(b * C + c) * HW + j] - mean;
        var += d * d;
      }
      var /= C;
      for (int64_t c = 0; c < C; ++c) {
        double expect = (x.data()[(b * C + c) * HW + j] - mean) / std::sqrt(var + eps) *
                            gain.data()[c] +
                        bias.data()[c];
        CHECK(y.data()[(b * C + c) * HW + j] == doctest::Approx(expect).epsilon(1e-6));
      }
    }
  CHECK_THROWS(layer_norm(x, gain, bias, 0.0));  // eps must be positive
}

TEST_CASE("layer_norm: gradients pass central differences") {
  Rng rng(6);
  Tensor<double> x = random_tensor({1, 4, 3, 3}, rng);
  LayerNormParams<double> p = LayerNormParams<double>::create(4);
  auto fwd = [&]() { return layer_norm(x, p, 1e-6); };
  CHECK(fd_gradcheck(x, fwd, rng) < 1e-3);
  CHECK(fd_gradcheck(p.gain, fwd, rng) < 1e-3);
  CHECK(fd_gradcheck(p.bias, fwd, rng) < 1e-3);
}

TEST_CASE("sigmoid: fixed points and saturation") {
  Tensor<double> x = Tensor<double>::from_data({3}, {0.0, 100.0, -100.0});
  Tensor<double> y = sigmoid(x);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(std::abs(y.data()[1] - 1.0) < 1e-12);
  CHECK(std::abs(y.data()[2]) < 1e-12);
}

TEST_CASE("sigmoid: gradient equals s(x)(1-s(x)) and matches finite differences") {
  Rng rng(7);
  Tensor<double> x = random_tensor({16}, rng, -3.0, 3.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    Tensor<double> loss = sum_all(sigmoid(x));
    tape.backward(loss);
  }
  for (size_t i = 0; i < 16; ++i) {
    double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
    CHECK(x.grad()[i] == doctest::Approx(s * (1 - s)).epsilon(1e-9));
  }
  x.drop_grad();
  CHECK(fd_gradcheck(x, [&]() { return sigmoid(x); }, rng, 1e-4) < 1e-4);
}

TEST_CASE("avg_pool2d: window means and error paths") {
  Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(avg_pool2d(x, 2).item() == doctest::Approx(2.5));

  Tensor<double> c = Tensor<double>::full({1, 3, 6, 6}, 0.25);
  Tensor<double> pooled = avg_pool2d(c, 3);
  CHECK(pooled.shape() == Shape{1, 3, 2, 2});
  for (double v : pooled.data()) CHECK(v == doctest::Approx(0.25));

  CHECK_THROWS(avg_pool2d(x, 0));
}

TEST_CASE("avg_pool2d: random input matches the windowed-mean oracle exactly") {
  Rng rng(8);
  Tensor<double> x = random_tensor({2, 3, 8, 12}, rng);
  Tensor<double> y = avg_pool2d(x, 4);
  for (int64_t bc = 0; bc < 6; ++bc)
    for (int64_t oy = 0; oy < 2; ++oy)
      for (int64_t ox = 0; ox < 3; ++ox) {
        double acc = 0;
        for (int64_t ky = 0; ky < 4; ++ky)
          for (int64_t kx = 0; kx < 4; ++kx)
            acc += x.data()[(bc * 8 + oy * 4 + ky) * 12 + ox * 4 + kx];
        CHECK(y.data()[(bc * 2 + oy) * 3 + ox] == doctest::Approx(acc / 16.0).epsilon(1e-12));
      }
}

TEST_CASE("avg_pool2d: non-divisible extents use symmetric reflection padding") {
  // 1x1x3x3 with k=2: padded to 4x4 by reflecting the last row/column.
  Tensor<double> x = Tensor<double>::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> y = avg_pool2d(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data()[0] == doctest::Approx((1 + 2 + 4 + 5) / 4.0));
  CHECK(y.data()[1] == doctest::Approx((3 + 3 + 6 + 6) / 4.0));  // column 3 mirrors column 2
  CHECK(y.data()[2] == doctest::Approx((7 + 8 + 7 + 8) / 4.0));  // row 3 mirrors row 2
  CHECK(y.data()[3] == doctest::Approx((9 + 9 + 9 + 9) / 4.0));
}

TEST_CASE("pixel_shuffle: definition, identity, and inverse round-trip") {
  Tensor<double> x = Tensor<double>::from_data({1, 4, 1, 1}, {1, 2, 3, 4});
  Tensor<double> y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data()[0] == 1);
  CHECK(y.data()[1] == 2);
  CHECK(y.data()[2] == 3);
  CHECK(y.data()[3] == 4);

  Rng rng(9);
  Tensor<double> r1 = random_tensor({2, 3, 4, 5}, rng);
  CHECK(max_abs_diff(pixel_shuffle(r1, 1), r1) == 0.0);

  for (int64_t r = 1; r <= 4; ++r) {
    Tensor<double> t = random_tensor({2, 2 * r * r, 3, 3}, rng);
    CHECK(max_abs_diff(pixel_unshuffle_oracle(pixel_shuffle(t, r), r), t) == 0.0);
  }
  CHECK_THROWS(pixel_shuffle(Tensor<double>::zeros({1, 3, 2, 2}), 2));  // 3 % 4 != 0
}

TEST_CASE("upsample_nearest: block replication and pooling inverse") {
  Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> y = upsample_nearest(x, 2);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y.data()[0] == 1);
  CHECK(y.data()[1] == 1);
  CHECK(y.data()[2] == 2);
  CHECK(y.data()[5] == 1);
  CHECK(y.data()[15] == 4);

  Rng rng(10);
  Tensor<double> r = random_tensor({2, 3, 4, 4}, rng);
  CHECK(max_abs_diff(upsample_nearest(r, 1), r) == 0.0);
  CHECK(max_abs_diff(avg_pool2d(upsample_nearest(r, 3), 3), r) < 1e-12);
}

TEST_CASE("linear: degenerate weights and the matmul oracle") {
  Rng rng(11);
  Tensor<double> x = random_tensor({4, 3}, rng);
  Tensor<double> zero_w = Tensor<double>::zeros({2, 3});
  Tensor<double> bias = random_tensor({2}, rng);
  Tensor<double> y = linear(x, zero_w, bias);
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t o = 0; o < 2; ++o) CHECK(y.data()[r * 2 + o] == doctest::Approx(bias.data()[o]));

  Tensor<double> eye = Tensor<double>::zeros({3, 3});
  for (int64_t i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  CHECK(max_abs_diff(linear(x, eye, Tensor<double>::zeros({3})), x) == 0.0);

  Tensor<double> w = random_tensor({5, 3}, rng);
  Tensor<double> b = random_tensor({5}, rng);
  Tensor<double> out = linear(x, w, b);
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t o = 0; o < 5; ++o) {
      double acc = b.data()[o];
      for (int64_t i = 0; i < 3; ++i) acc += x.data()[r * 3 + i] * w.data()[o * 3 + i];
      CHECK(out.data()[r * 5 + o] == doctest::Approx(acc).epsilon(1e-9));
    }

  CHECK_THROWS(linear(x, random_tensor({5, 4}, rng), Tensor<double>{}));  // inner mismatch
}

TEST_CASE("linear: gradients pass central differences") {
  Rng rng(12);
  Tensor<double> x = random_tensor({2, 6, 4}, rng);
  LinearParams<double> p = LinearParams<double>::create(3, 4, rng);
  auto fwd = [&]() { return linear(x, p); };
  CHECK(fd_gradcheck(x, fwd, rng) < 1e-4);
  CHECK(fd_gradcheck(p.weight, fwd, rng) < 1e-4);
  CHECK(fd_gradcheck(p.bias, fwd, rng) < 1e-4);
}

TEST_CASE("reductions: channel mean/max oracles and gradient routing") {
  Rng rng(13);
  Tensor<double> x = random_tensor({2, 4, 3, 3}, rng);
  Tensor<double> cm = mean_channel(x);
  Tensor<double> cx = max_channel(x);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t j = 0; j < 9; ++j) {
      double mean = 0, best = -1e300;
      for (int64_t c = 0; c < 4; ++c) {
        double v = x.data()[(b * 4 + c) * 9 + j];
        mean += v;
        best = std::max(best, v);
      }
      CHECK(cm.data()[b * 9 + j] == doctest::Approx(mean / 4.0));
      CHECK(cx.data()[b * 9 + j] == doctest::Approx(best));
    }
  CHECK(fd_gradcheck(x, [&]() { return mean_channel(x); }, rng) < 1e-4);
  CHECK(fd_gradcheck(x, [&]() { return max_channel(x); }, rng) < 1e-4);
  CHECK(fd_gradcheck(x, [&]() { return mean_spatial(x); }, rng) < 1e-4);
}

TEST_CASE("structural ops: pad, crop, concat, slice") {
  Rng rng(14);
  Tensor<double> x = random_tensor({1, 2, 3, 3}, rng);

  Tensor<double> padded = reflect_pad2d(x, 2, 1);
  CHECK(padded.shape() == Shape{1, 2, 5, 4});
  // symmetric fold: row 3 -> row 2, row 4 -> row 1; col 3 -> col 2
  CHECK(padded.data()[3 * 4 + 0] == x.data()[2 * 3 + 0]);
  CHECK(padded.data()[4 * 4 + 0] == x.data()[1 * 3 + 0]);
  CHECK(padded.data()[0 * 4 + 3] == x.data()[0 * 3 + 2]);

  Tensor<double> cropped = crop2d(padded, 3, 3);
  CHECK(max_abs_diff(cropped, x) == 0.0);

  Tensor<double> y = random_tensor({1, 3, 3, 3}, rng);
  Tensor<double> cat = concat_channels<double>({x, y});
  CHECK(cat.shape() == Shape{1, 5, 3, 3});
  CHECK(max_abs_diff(slice_channels(cat, 0, 2), x) == 0.0);
  CHECK(max_abs_diff(slice_channels(cat, 2, 5), y) == 0.0);

  CHECK(fd_gradcheck(x, [&]() { return reflect_pad2d(x, 1, 2); }, rng) < 1e-4);
  CHECK(fd_gradcheck(x, [&]() { return crop2d(x, 2, 2); }, rng) < 1e-4);
  CHECK(fd_gradcheck(x, [&]() { return concat_channels<double>({x, y}); }, rng) < 1e-4);
}

TEST_CASE("silu and softplus gradients") {
  Rng rng(15);
  Tensor<double> x = random_tensor({32}, rng, -4.0, 4.0);
  CHECK(fd_gradcheck(x, [&]() { return silu(x); }, rng, 1e-5) < 1e-4);
  CHECK(fd_gradcheck(x, [&]() { return softplus(x); }, rng, 1e-5) < 1e-4);
  // softplus output is strictly positive
  Tensor<double> sp = softplus(x);
  for (double v : sp.data()) CHECK(v > 0.0);
}

TEST_CASE("pooling and shuffle gradients") {
  Rng rng(16);
  Tensor<double> x = random_tensor({1, 4, 4, 4}, rng);
  CHECK(fd_gradcheck(x, [&]() { return avg_pool2d(x, 2); }, rng) < 1e-4);
  CHECK(fd_gradcheck(x, [&]() { return pixel_shuffle(x, 2); }, rng) < 1e-4);
  CHECK(fd_gradcheck(x, [&]() { return upsample_nearest(x, 2); }, rng) < 1e-4);
  Tensor<double> odd = random_tensor({1, 2, 5, 5}, rng);
  CHECK(fd_gradcheck(odd, [&]() { return avg_pool2d(odd, 2); }, rng) < 1e-4);
}
