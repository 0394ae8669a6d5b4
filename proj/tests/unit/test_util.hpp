#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "fgmamba/ops.hpp"

namespace fgmamba::testutil {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>::uniform(std::move(shape), rng, lo, hi);
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  auto av = a.data();
  auto bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
  return worst;
}

inline double max_rel_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  auto av = a.data();
  auto bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) {
    double denom = std::max({std::abs(av[i]), std::abs(bv[i]), 1e-12});
    worst = std::max(worst, std::abs(av[i] - bv[i]) / denom);
  }
  return worst;
}

// Central-difference check of one differentiable input of an op. The loss is
// sum(op_output * probe) with a fixed random probe; `leaf` must participate
// in `forward`.
inline double fd_gradcheck(Tensor<double>& leaf,
                           const std::function<Tensor<double>()>& forward, Rng& rng,
                           double step = 1e-6) {
  leaf.set_requires_grad(true);
  leaf.drop_grad();  // clear residue from earlier checks of the same graph
  Tensor<double> probe;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> out = forward();
    Rng probe_rng(rng.next_bits());
    probe = random_tensor(out.shape(), probe_rng);
    Tensor<double> loss = sum_all(mul(out, probe));
    tape.backward(loss);
  }
  REQUIRE(leaf.has_grad());
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  leaf.drop_grad();

  auto loss_at = [&]() {
    Tensor<double> out = forward();
    return sum_all(mul(out, probe)).item();
  };
  double worst = 0;
  auto theta = leaf.data();
  for (size_t i = 0; i < theta.size(); ++i) {
    double orig = theta[i];
    double h = step * std::max(1.0, std::abs(orig));
    theta[i] = orig + h;
    double up = loss_at();
    theta[i] = orig - h;
    double down = loss_at();
    theta[i] = orig;
    double numeric = (up - down) / (2.0 * h);
    double err = std::abs(analytic[i] - numeric) /
                 (1e-3 + std::max(std::abs(analytic[i]), std::abs(numeric)));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fgmamba::testutil
