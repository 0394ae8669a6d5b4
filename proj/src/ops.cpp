#include "fgmamba/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fgmamba {

namespace {

template <typename T>
bool grad_needed(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::active()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
void mark_and_record(Tensor<T>& out, std::function<void()> backward_fn) {
  out.set_requires_grad(true);
  Tape<T>::active()->record(std::move(backward_fn));
}

// Right-aligned broadcast plan for rank <= 4 operands.
struct BcastPlan {
  Shape out_shape;
  std::array<int64_t, 4> ext{};
  std::array<int64_t, 4> a_stride{};
  std::array<int64_t, 4> b_stride{};
  int64_t n = 0;
};

std::array<int64_t, 4> pad4(const Shape& s) {
  FGM_CHECK(s.size() <= 4, "broadcast supports rank <= 4, got " + shape_str(s));
  std::array<int64_t, 4> e{1, 1, 1, 1};
  for (size_t i = 0; i < s.size(); ++i) e[4 - s.size() + i] = s[i];
  return e;
}

BcastPlan make_plan(const Shape& a, const Shape& b) {
  auto ae = pad4(a);
  auto be = pad4(b);
  BcastPlan p;
  for (int i = 0; i < 4; ++i) {
    FGM_CHECK(ae[i] == be[i] || ae[i] == 1 || be[i] == 1,
              "shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    p.ext[i] = std::max(ae[i], be[i]);
  }
  std::array<int64_t, 4> as{}, bs{};
  int64_t sa = 1, sb = 1;
  for (int i = 3; i >= 0; --i) {
    as[i] = (ae[i] == 1) ? 0 : sa;
    bs[i] = (be[i] == 1) ? 0 : sb;
    sa *= ae[i];
    sb *= be[i];
  }
  p.a_stride = as;
  p.b_stride = bs;
  p.n = p.ext[0] * p.ext[1] * p.ext[2] * p.ext[3];
  size_t out_rank = std::max(a.size(), b.size());
  p.out_shape.assign(p.ext.begin() + (4 - out_rank), p.ext.end());
  return p;
}

// Decompose a flat output index into operand offsets.
inline void plan_offsets(const BcastPlan& p, int64_t flat, int64_t& ai, int64_t& bi) {
  int64_t i3 = flat % p.ext[3];
  int64_t r = flat / p.ext[3];
  int64_t i2 = r % p.ext[2];
  r /= p.ext[2];
  int64_t i1 = r % p.ext[1];
  int64_t i0 = r / p.ext[1];
  ai = i0 * p.a_stride[0] + i1 * p.a_stride[1] + i2 * p.a_stride[2] + i3 * p.a_stride[3];
  bi = i0 * p.b_stride[0] + i1 * p.b_stride[1] + i2 * p.b_stride[2] + i3 * p.b_stride[3];
}

enum class BinKind { Add, Sub, Mul };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinKind kind) {
  const bool same_shape = a.shape() == b.shape();
  BcastPlan plan;
  Tensor<T> out;
  auto av = a.data();
  auto bv = b.data();
  if (same_shape) {
    out = Tensor<T>(a.shape());
    auto ov = out.data();
    switch (kind) {
      case BinKind::Add:
        for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
        break;
      case BinKind::Sub:
        for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
        break;
      case BinKind::Mul:
        for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
        break;
    }
  } else {
    plan = make_plan(a.shape(), b.shape());
    out = Tensor<T>(plan.out_shape);
    auto ov = out.data();
    for (int64_t i = 0; i < plan.n; ++i) {
      int64_t ai, bi;
      plan_offsets(plan, i, ai, bi);
      switch (kind) {
        case BinKind::Add: ov[i] = av[ai] + bv[bi]; break;
        case BinKind::Sub: ov[i] = av[ai] - bv[bi]; break;
        case BinKind::Mul: ov[i] = av[ai] * bv[bi]; break;
      }
    }
  }
  if (grad_needed<T>({&a, &b})) {
    bool need_a = a.requires_grad();
    bool need_b = b.requires_grad();
    Tensor<T> ac = a, bc = b, oc = out;
    mark_and_record(out, [plan, ac, bc, oc, need_a, need_b, kind, same_shape]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto av2 = ac.data();
      auto bv2 = bc.data();
      std::span<T> ga, gb;
      if (need_a) ga = ac.grad_mut();
      if (need_b) gb = bc.grad_mut();
      if (same_shape) {
        for (size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case BinKind::Add:
              if (need_a) ga[i] += g[i];
              if (need_b) gb[i] += g[i];
              break;
            case BinKind::Sub:
              if (need_a) ga[i] += g[i];
              if (need_b) gb[i] -= g[i];
              break;
            case BinKind::Mul:
              if (need_a) ga[i] += g[i] * bv2[i];
              if (need_b) gb[i] += g[i] * av2[i];
              break;
          }
        }
        return;
      }
      for (int64_t i = 0; i < plan.n; ++i) {
        int64_t ai, bi;
        plan_offsets(plan, i, ai, bi);
        switch (kind) {
          case BinKind::Add:
            if (need_a) ga[ai] += g[i];
            if (need_b) gb[bi] += g[i];
            break;
          case BinKind::Sub:
            if (need_a) ga[ai] += g[i];
            if (need_b) gb[bi] -= g[i];
            break;
          case BinKind::Mul:
            if (need_a) ga[ai] += g[i] * bv2[bi];
            if (need_b) gb[bi] += g[i] * av2[ai];
            break;
        }
      }
    });
  }
  return out;
}

// Unary op; backward factor computed from (x, y).
template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Bwd bwd_factor) {
  Tensor<T> out(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = fwd(av[i]);
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, bwd_factor]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto av2 = ac.data();
      auto ov2 = oc.data();
      auto ga = ac.grad_mut();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bwd_factor(av2[i], ov2[i]);
    });
  }
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  // log(1 + exp(x)) = max(x, 0) + log1p(exp(-|x|))
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

namespace debug {
bool corrupt_sigmoid_backward = false;
}

template <typename T>
ConvParams<T> ConvParams<T>::create(int64_t out_ch, int64_t in_ch, int64_t k, Rng& rng,
                                    int64_t stride, int64_t padding, int64_t groups) {
  FGM_CHECK(groups >= 1 && out_ch % groups == 0 && in_ch % groups == 0,
            "group divisibility violation");
  ConvParams p;
  double bound = 1.0 / std::sqrt(static_cast<double>((in_ch / groups) * k * k));
  p.weight = Tensor<T>::uniform({out_ch, in_ch / groups, k, k}, rng, -bound, bound);
  p.weight.set_requires_grad(true);
  p.bias = Tensor<T>::zeros({out_ch});
  p.bias.set_requires_grad(true);
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  return p;
}

template <typename T>
LinearParams<T> LinearParams<T>::create(int64_t out, int64_t in, Rng& rng, bool with_bias) {
  LinearParams p;
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  p.weight = Tensor<T>::uniform({out, in}, rng, -bound, bound);
  p.weight.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>::zeros({out});
    p.bias.set_requires_grad(true);
  }
  return p;
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::create(int64_t channels) {
  LayerNormParams p;
  p.gain = Tensor<T>::full({channels}, T(1));
  p.gain.set_requires_grad(true);
  p.bias = Tensor<T>::zeros({channels});
  p.bias.set_requires_grad(true);
  return p;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary_op(a, b, BinKind::Add); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary_op(a, b, BinKind::Sub); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary_op(a, b, BinKind::Mul); }

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
  T f = static_cast<T>(factor);
  return unary_op(a, [f](T x) { return x * f; }, [f](T, T) { return f; });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& a) {
  // subgradient 0 at exact ties
  return unary_op(a, [](T x) { return std::abs(x); },
                  [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return stable_sigmoid(x); },
                  [](T, T y) {
                    T d = y * (T(1) - y);
                    if (debug::corrupt_sigmoid_backward) d *= T(1.02);
                    return d;
                  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return x * stable_sigmoid(x); },
                  [](T x, T) {
                    T s = stable_sigmoid(x);
                    return s * (T(1) + x * (T(1) - s));
                  });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary_op(a, [](T x) { return stable_softplus(x); },
                  [](T x, T) { return stable_sigmoid(x); });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  double acc = 0;
  for (T v : a.data()) acc += static_cast<double>(v);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc]() mutable {
      if (!oc.has_grad()) return;
      T g = oc.grad()[0];
      auto ga = ac.grad_mut();
      for (T& v : ga) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  FGM_CHECK(a.numel() > 0, "mean of empty tensor");
  double acc = 0;
  for (T v : a.data()) acc += static_cast<double>(v);
  T inv_n = static_cast<T>(1.0 / static_cast<double>(a.numel()));
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(a.numel())));
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, inv_n]() mutable {
      if (!oc.has_grad()) return;
      T g = oc.grad()[0] * inv_n;
      auto ga = ac.grad_mut();
      for (T& v : ga) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_spatial(const Tensor<T>& a) {
  FGM_CHECK(a.rank() == 4, "mean_spatial expects BCHW, got " + shape_str(a.shape()));
  int64_t b = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3);
  int64_t hw = h * w;
  Tensor<T> out({b, c, 1, 1});
  auto av = a.data();
  auto ov = out.data();
  for (int64_t i = 0; i < b * c; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < hw; ++j) acc += static_cast<double>(av[i * hw + j]);
    ov[i] = static_cast<T>(acc / static_cast<double>(hw));
  }
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, b, c, hw]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto ga = ac.grad_mut();
      T inv = static_cast<T>(1.0 / static_cast<double>(hw));
      for (int64_t i = 0; i < b * c; ++i)
        for (int64_t j = 0; j < hw; ++j) ga[i * hw + j] += g[i] * inv;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_channel(const Tensor<T>& a) {
  FGM_CHECK(a.rank() == 4, "mean_channel expects BCHW, got " + shape_str(a.shape()));
  int64_t b = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3);
  int64_t hw = h * w;
  Tensor<T> out({b, 1, h, w});
  auto av = a.data();
  auto ov = out.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < hw; ++j) {
      double acc = 0;
      for (int64_t ci = 0; ci < c; ++ci) acc += static_cast<double>(av[(bi * c + ci) * hw + j]);
      ov[bi * hw + j] = static_cast<T>(acc / static_cast<double>(c));
    }
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, b, c, hw]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto ga = ac.grad_mut();
      T inv = static_cast<T>(1.0 / static_cast<double>(c));
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < hw; ++j)
          for (int64_t ci = 0; ci < c; ++ci) ga[(bi * c + ci) * hw + j] += g[bi * hw + j] * inv;
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_channel(const Tensor<T>& a) {
  FGM_CHECK(a.rank() == 4, "max_channel expects BCHW, got " + shape_str(a.shape()));
  int64_t b = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3);
  FGM_CHECK(c >= 1, "max_channel needs at least one channel");
  int64_t hw = h * w;
  Tensor<T> out({b, 1, h, w});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(b * hw));
  auto av = a.data();
  auto ov = out.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < hw; ++j) {
      T best = av[(bi * c) * hw + j];
      int64_t best_c = 0;
      for (int64_t ci = 1; ci < c; ++ci) {
        T v = av[(bi * c + ci) * hw + j];
        if (v > best) {
          best = v;
          best_c = ci;
        }
      }
      ov[bi * hw + j] = best;
      (*argmax)[static_cast<size_t>(bi * hw + j)] = best_c;
    }
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, argmax, b, c, hw]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto ga = ac.grad_mut();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < hw; ++j) {
          int64_t ci = (*argmax)[static_cast<size_t>(bi * hw + j)];
          ga[(bi * c + ci) * hw + j] += g[bi * hw + j];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  FGM_CHECK(numel_of(shape) == a.numel(),
            "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes numel");
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), {a.data().begin(), a.data().end()});
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto ga = ac.grad_mut();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  FGM_CHECK(!parts.empty(), "concat of zero tensors");
  int64_t b = parts[0].size(0), h = parts[0].size(2), w = parts[0].size(3);
  int64_t c_total = 0;
  for (const auto& p : parts) {
    FGM_CHECK(p.rank() == 4 && p.size(0) == b && p.size(2) == h && p.size(3) == w,
              "concat_channels: incompatible shapes");
    c_total += p.size(1);
  }
  int64_t hw = h * w;
  Tensor<T> out({b, c_total, h, w});
  auto ov = out.data();
  int64_t c_off = 0;
  for (const auto& p : parts) {
    auto pv = p.data();
    int64_t pc = p.size(1);
    for (int64_t bi = 0; bi < b; ++bi)
      std::copy_n(pv.begin() + bi * pc * hw, pc * hw, ov.begin() + (bi * c_total + c_off) * hw);
    c_off += pc;
  }
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (Tape<T>::active() && track) {
    std::vector<Tensor<T>> pc_copy = parts;
    Tensor<T> oc = out;
    mark_and_record(out, [pc_copy, oc, b, c_total, hw]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      int64_t off = 0;
      for (auto& p : pc_copy) {
        int64_t pc = p.size(1);
        if (p.requires_grad()) {
          auto ga = p.grad_mut();
          for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t i = 0; i < pc * hw; ++i)
              ga[bi * pc * hw + i] += g[(bi * c_total + off) * hw + i];
        }
        off += pc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int64_t c0, int64_t c1) {
  FGM_CHECK(a.rank() == 4, "slice_channels expects BCHW");
  int64_t b = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3);
  FGM_CHECK(0 <= c0 && c0 < c1 && c1 <= c, "slice_channels: bad range");
  int64_t hw = h * w, cs = c1 - c0;
  Tensor<T> out({b, cs, h, w});
  auto av = a.data();
  auto ov = out.data();
  for (int64_t bi = 0; bi < b; ++bi)
    std::copy_n(av.begin() + (bi * c + c0) * hw, cs * hw, ov.begin() + bi * cs * hw);
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, b, c, c0, cs, hw]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto ga = ac.grad_mut();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < cs * hw; ++i)
          ga[(bi * c + c0) * hw + i] += g[bi * cs * hw + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& a, int64_t out_h, int64_t out_w) {
  FGM_CHECK(a.rank() == 4, "crop2d expects BCHW");
  int64_t b = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3);
  FGM_CHECK(out_h >= 1 && out_h <= h && out_w >= 1 && out_w <= w, "crop2d: bad extents");
  Tensor<T> out({b, c, out_h, out_w});
  auto av = a.data();
  auto ov = out.data();
  for (int64_t bc = 0; bc < b * c; ++bc)
    for (int64_t y = 0; y < out_h; ++y)
      std::copy_n(av.begin() + (bc * h + y) * w, out_w, ov.begin() + (bc * out_h + y) * out_w);
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, b, c, h, w, out_h, out_w]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto ga = ac.grad_mut();
      for (int64_t bc = 0; bc < b * c; ++bc)
        for (int64_t y = 0; y < out_h; ++y)
          for (int64_t x = 0; x < out_w; ++x)
            ga[(bc * h + y) * w + x] += g[(bc * out_h + y) * out_w + x];
    });
  }
  return out;
}

int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  int64_t period = 2 * n;
  int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

template <typename T>
Tensor<T> reflect_pad2d(const Tensor<T>& a, int64_t pad_h, int64_t pad_w) {
  FGM_CHECK(a.rank() == 4, "reflect_pad2d expects BCHW");
  FGM_CHECK(pad_h >= 0 && pad_w >= 0, "reflect_pad2d: negative padding");
  int64_t b = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3);
  int64_t oh = h + pad_h, ow = w + pad_w;
  Tensor<T> out({b, c, oh, ow});
  auto av = a.data();
  auto ov = out.data();
  for (int64_t bc = 0; bc < b * c; ++bc)
    for (int64_t y = 0; y < oh; ++y) {
      int64_t sy = reflect_index(y, h);
      for (int64_t x = 0; x < ow; ++x)
        ov[(bc * oh + y) * ow + x] = av[(bc * h + sy) * w + reflect_index(x, w)];
    }
  if (grad_needed<T>({&a})) {
    Tensor<T> ac = a, oc = out;
    mark_and_record(out, [ac, oc, b, c, h, w, oh, ow]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto ga = ac.grad_mut();
      for (int64_t bc = 0; bc < b * c; ++bc)
        for (int64_t y = 0; y < oh; ++y) {
          int64_t sy = reflect_index(y, h);
          for (int64_t x = 0; x < ow; ++x)
            ga[(bc * h + sy) * w + reflect_index(x, w)] += g[(bc * oh + y) * ow + x];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  FGM_CHECK(weight.rank() == 2, "linear: weight must be (out, in)");
  int64_t in = weight.size(1), out_dim = weight.size(0);
  FGM_CHECK(x.rank() >= 1 && x.size(x.rank() - 1) == in,
            "linear: dimension mismatch, input " + shape_str(x.shape()) + " vs weight " +
                shape_str(weight.shape()));
  if (bias.defined()) FGM_CHECK(bias.numel() == out_dim, "linear: bias size mismatch");
  int64_t m = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor<T> out(out_shape);
  auto xv = x.data();
  auto wv = weight.data();
  auto ov = out.data();
  for (int64_t r = 0; r < m; ++r)
    for (int64_t o = 0; o < out_dim; ++o) {
      double acc = bias.defined() ? static_cast<double>(bias.data()[o]) : 0.0;
      const T* xr = xv.data() + r * in;
      const T* wr = wv.data() + o * in;
      for (int64_t i = 0; i < in; ++i) acc += static_cast<double>(xr[i]) * static_cast<double>(wr[i]);
      ov[r * out_dim + o] = static_cast<T>(acc);
    }
  if (grad_needed<T>({&x, &weight, &bias})) {
    Tensor<T> xc = x, wc = weight, bc = bias, oc = out;
    mark_and_record(out, [xc, wc, bc, oc, m, in, out_dim]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto xv2 = xc.data();
      auto wv2 = wc.data();
      if (xc.requires_grad()) {
        auto gx = xc.grad_mut();
        for (int64_t r = 0; r < m; ++r)
          for (int64_t o = 0; o < out_dim; ++o) {
            T go = g[r * out_dim + o];
            for (int64_t i = 0; i < in; ++i) gx[r * in + i] += go * wv2[o * in + i];
          }
      }
      if (wc.requires_grad()) {
        auto gw = wc.grad_mut();
        for (int64_t r = 0; r < m; ++r)
          for (int64_t o = 0; o < out_dim; ++o) {
            T go = g[r * out_dim + o];
            for (int64_t i = 0; i < in; ++i) gw[o * in + i] += go * xv2[r * in + i];
          }
      }
      if (bc.defined() && bc.requires_grad()) {
        auto gb = bc.grad_mut();
        for (int64_t r = 0; r < m; ++r)
          for (int64_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  return linear(x, p.weight, p.bias);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  FGM_CHECK(x.rank() == 4, "conv2d expects BCHW input, got " + shape_str(x.shape()));
  FGM_CHECK(p.weight.rank() == 4, "conv2d: weight must be (out, in/groups, kh, kw)");
  int64_t batch = x.size(0), c_in = x.size(1), h = x.size(2), w = x.size(3);
  int64_t c_out = p.weight.size(0), kh = p.weight.size(2), kw = p.weight.size(3);
  int64_t groups = p.groups, stride = p.stride, pad = p.padding;
  FGM_CHECK(stride >= 1 && pad >= 0 && groups >= 1, "conv2d: bad hyperparameters");
  FGM_CHECK(c_in % groups == 0 && c_out % groups == 0, "conv2d: group divisibility violation");
  FGM_CHECK(p.weight.size(1) == c_in / groups,
            "conv2d: channel mismatch, input has " + std::to_string(c_in) + " channels");
  FGM_CHECK(p.bias.defined() && p.bias.numel() == c_out, "conv2d: bias size mismatch");
  FGM_CHECK(h >= 1 && w >= 1, "conv2d: empty spatial extents");
  int64_t oh = (h + 2 * pad - kh) / stride + 1;
  int64_t ow = (w + 2 * pad - kw) / stride + 1;
  FGM_CHECK(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");
  int64_t cg_in = c_in / groups, cg_out = c_out / groups;

  // 1x1 stride-1 convolutions are pure channel mixes; skip the tap loops.
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    int64_t hw = h * w;
    Tensor<T> out({batch, c_out, h, w});
    auto xv = x.data();
    auto wv = p.weight.data();
    auto bv = p.bias.data();
    auto ov = out.data();
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t oc = 0; oc < c_out; ++oc) {
        int64_t g = oc / cg_out;
        T* orow = ov.data() + (b * c_out + oc) * hw;
        for (int64_t j = 0; j < hw; ++j) orow[j] = bv[oc];
        for (int64_t ic = 0; ic < cg_in; ++ic) {
          const T wgt = wv[oc * cg_in + ic];
          const T* xrow = xv.data() + (b * c_in + g * cg_in + ic) * hw;
          for (int64_t j = 0; j < hw; ++j) orow[j] += wgt * xrow[j];
        }
      }
    if (grad_needed<T>({&x, &p.weight, &p.bias})) {
      Tensor<T> xc = x, wc = p.weight, bc = p.bias, oc_t = out;
      mark_and_record(out, [xc, wc, bc, oc_t, batch, c_in, c_out, hw, cg_in, cg_out]() mutable {
        if (!oc_t.has_grad()) return;
        auto g = oc_t.grad();
        auto xv2 = xc.data();
        auto wv2 = wc.data();
        bool need_x = xc.requires_grad(), need_w = wc.requires_grad(),
             need_b = bc.requires_grad();
        std::span<T> gx, gw, gb;
        if (need_x) gx = xc.grad_mut();
        if (need_w) gw = wc.grad_mut();
        if (need_b) gb = bc.grad_mut();
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t oc = 0; oc < c_out; ++oc) {
            int64_t grp = oc / cg_out;
            const T* grow = g.data() + (b * c_out + oc) * hw;
            if (need_b) {
              T acc = T(0);
              for (int64_t j = 0; j < hw; ++j) acc += grow[j];
              gb[oc] += acc;
            }
            for (int64_t ic = 0; ic < cg_in; ++ic) {
              int64_t x_base = (b * c_in + grp * cg_in + ic) * hw;
              if (need_x) {
                const T wgt = wv2[oc * cg_in + ic];
                for (int64_t j = 0; j < hw; ++j) gx[x_base + j] += wgt * grow[j];
              }
              if (need_w) {
                T acc = T(0);
                for (int64_t j = 0; j < hw; ++j) acc += grow[j] * xv2[x_base + j];
                gw[oc * cg_in + ic] += acc;
              }
            }
          }
      });
    }
    return out;
  }

  Tensor<T> out({batch, c_out, oh, ow});
  auto xv = x.data();
  auto wv = p.weight.data();
  auto bv = p.bias.data();
  auto ov = out.data();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t oc = 0; oc < c_out; ++oc) {
      int64_t g = oc / cg_out;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = static_cast<double>(bv[oc]);
          for (int64_t ic = 0; ic < cg_in; ++ic) {
            const T* xplane = xv.data() + ((b * c_in + g * cg_in + ic) * h) * w;
            const T* wplane = wv.data() + ((oc * cg_in + ic) * kh) * kw;
            for (int64_t ky = 0; ky < kh; ++ky) {
              int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= w) continue;
                acc += static_cast<double>(xplane[iy * w + ix]) *
                       static_cast<double>(wplane[ky * kw + kx]);
              }
            }
          }
          ov[((b * c_out + oc) * oh + oy) * ow + ox] = static_cast<T>(acc);
        }
    }

  if (grad_needed<T>({&x, &p.weight, &p.bias})) {
    Tensor<T> xc = x, wc = p.weight, bc = p.bias, oc_t = out;
    mark_and_record(out, [xc, wc, bc, oc_t, batch, c_in, c_out, h, w, oh, ow, kh, kw, stride,
                          pad, groups, cg_in, cg_out]() mutable {
      if (!oc_t.has_grad()) return;
      auto g = oc_t.grad();
      auto xv2 = xc.data();
      auto wv2 = wc.data();
      bool need_x = xc.requires_grad(), need_w = wc.requires_grad(), need_b = bc.requires_grad();
      std::span<T> gx, gw, gb;
      if (need_x) gx = xc.grad_mut();
      if (need_w) gw = wc.grad_mut();
      if (need_b) gb = bc.grad_mut();
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t oc = 0; oc < c_out; ++oc) {
          int64_t grp = oc / cg_out;
          for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
              T go = g[((b * c_out + oc) * oh + oy) * ow + ox];
              if (go == T(0)) continue;
              if (need_b) gb[oc] += go;
              if (!need_x && !need_w) continue;
              for (int64_t ic = 0; ic < cg_in; ++ic) {
                int64_t x_base = ((b * c_in + grp * cg_in + ic) * h) * w;
                int64_t w_base = ((oc * cg_in + ic) * kh) * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                  int64_t iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= w) continue;
                    if (need_x) gx[x_base + iy * w + ix] += go * wv2[w_base + ky * kw + kx];
                    if (need_w) gw[w_base + ky * kw + kx] += go * xv2[x_base + iy * w + ix];
                  }
                }
              }
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  FGM_CHECK(x.rank() == 4, "layer_norm expects BCHW, got " + shape_str(x.shape()));
  FGM_CHECK(eps > 0, "layer_norm: eps must be positive");
  int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  FGM_CHECK(gain.numel() == c && bias.numel() == c, "layer_norm: gain/bias must have one value per channel");
  int64_t hw = h * w;
  Tensor<T> out(x.shape());
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(b * hw * 2));
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  auto ov = out.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < hw; ++j) {
      double mean = 0;
      for (int64_t ci = 0; ci < c; ++ci) mean += static_cast<double>(xv[(bi * c + ci) * hw + j]);
      mean /= static_cast<double>(c);
      double var = 0;
      for (int64_t ci = 0; ci < c; ++ci) {
        double d = static_cast<double>(xv[(bi * c + ci) * hw + j]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(c);
      double rstd = 1.0 / std::sqrt(var + eps);
      (*stats)[static_cast<size_t>((bi * hw + j) * 2)] = mean;
      (*stats)[static_cast<size_t>((bi * hw + j) * 2 + 1)] = rstd;
      for (int64_t ci = 0; ci < c; ++ci) {
        double xhat = (static_cast<double>(xv[(bi * c + ci) * hw + j]) - mean) * rstd;
        ov[(bi * c + ci) * hw + j] =
            static_cast<T>(xhat * static_cast<double>(gv[ci]) + static_cast<double>(bv[ci]));
      }
    }
  if (grad_needed<T>({&x, &gain, &bias})) {
    Tensor<T> xc = x, gc = gain, bc = bias, oc = out;
    mark_and_record(out, [xc, gc, bc, oc, stats, b, c, hw]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto xv2 = xc.data();
      auto gv2 = gc.data();
      bool need_x = xc.requires_grad(), need_g = gc.requires_grad(), need_b = bc.requires_grad();
      std::span<T> gx, gg, gb;
      if (need_x) gx = xc.grad_mut();
      if (need_g) gg = gc.grad_mut();
      if (need_b) gb = bc.grad_mut();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < hw; ++j) {
          double mean = (*stats)[static_cast<size_t>((bi * hw + j) * 2)];
          double rstd = (*stats)[static_cast<size_t>((bi * hw + j) * 2 + 1)];
          double sum_dyg = 0, sum_dyg_xhat = 0;
          for (int64_t ci = 0; ci < c; ++ci) {
            int64_t idx = (bi * c + ci) * hw + j;
            double xhat = (static_cast<double>(xv2[idx]) - mean) * rstd;
            double dyg = static_cast<double>(g[idx]) * static_cast<double>(gv2[ci]);
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            if (need_g) gg[ci] += static_cast<T>(static_cast<double>(g[idx]) * xhat);
            if (need_b) gb[ci] += g[idx];
          }
          if (need_x) {
            double inv_c = 1.0 / static_cast<double>(c);
            for (int64_t ci = 0; ci < c; ++ci) {
              int64_t idx = (bi * c + ci) * hw + j;
              double xhat = (static_cast<double>(xv2[idx]) - mean) * rstd;
              double dyg = static_cast<double>(g[idx]) * static_cast<double>(gv2[ci]);
              gx[idx] += static_cast<T>(rstd * (dyg - inv_c * sum_dyg - xhat * inv_c * sum_dyg_xhat));
            }
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p, double eps) {
  return layer_norm(x, p.gain, p.bias, eps);
}

namespace {

// Non-overlapping k x k mean pooling; extents must already divide.
template <typename T>
Tensor<T> avg_pool_exact(const Tensor<T>& x, int64_t k) {
  int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  int64_t oh = h / k, ow = w / k;
  Tensor<T> out({b, c, oh, ow});
  auto xv = x.data();
  auto ov = out.data();
  double inv = 1.0 / static_cast<double>(k * k);
  for (int64_t bc = 0; bc < b * c; ++bc)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        double acc = 0;
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx)
            acc += static_cast<double>(xv[(bc * h + oy * k + ky) * w + ox * k + kx]);
        ov[(bc * oh + oy) * ow + ox] = static_cast<T>(acc * inv);
      }
  if (grad_needed<T>({&x})) {
    Tensor<T> xc = x, oc = out;
    mark_and_record(out, [xc, oc, b, c, h, w, oh, ow, k]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto gx = xc.grad_mut();
      T inv = static_cast<T>(1.0 / static_cast<double>(k * k));
      for (int64_t bc = 0; bc < b * c; ++bc)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            T go = g[(bc * oh + oy) * ow + ox] * inv;
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx)
                gx[(bc * h + oy * k + ky) * w + ox * k + kx] += go;
          }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int64_t k) {
  FGM_CHECK(x.rank() == 4, "avg_pool2d expects BCHW, got " + shape_str(x.shape()));
  FGM_CHECK(k >= 1, "avg_pool2d: k must be >= 1");
  if (k == 1) return reshape(x, x.shape());
  int64_t h = x.size(2), w = x.size(3);
  int64_t pad_h = (k - h % k) % k, pad_w = (k - w % k) % k;
  if (pad_h || pad_w) return avg_pool_exact(reflect_pad2d(x, pad_h, pad_w), k);
  return avg_pool_exact(x, k);
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int64_t r) {
  FGM_CHECK(x.rank() == 4, "pixel_shuffle expects BCHW");
  FGM_CHECK(r >= 1, "pixel_shuffle: r must be >= 1");
  int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  FGM_CHECK(c % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
  int64_t oc_n = c / (r * r), oh = h * r, ow = w * r;
  Tensor<T> out({b, oc_n, oh, ow});
  auto xv = x.data();
  auto ov = out.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t co = 0; co < oc_n; ++co)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t dy = 0; dy < r; ++dy)
          for (int64_t xcoord = 0; xcoord < w; ++xcoord)
            for (int64_t dx = 0; dx < r; ++dx)
              ov[((bi * oc_n + co) * oh + y * r + dy) * ow + xcoord * r + dx] =
                  xv[((bi * c + co * r * r + dy * r + dx) * h + y) * w + xcoord];
  if (grad_needed<T>({&x})) {
    Tensor<T> xc = x, oc_t = out;
    mark_and_record(out, [xc, oc_t, b, c, h, w, oc_n, oh, ow, r]() mutable {
      if (!oc_t.has_grad()) return;
      auto g = oc_t.grad();
      auto gx = xc.grad_mut();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t co = 0; co < oc_n; ++co)
          for (int64_t y = 0; y < h; ++y)
            for (int64_t dy = 0; dy < r; ++dy)
              for (int64_t xcoord = 0; xcoord < w; ++xcoord)
                for (int64_t dx = 0; dx < r; ++dx)
                  gx[((bi * c + co * r * r + dy * r + dx) * h + y) * w + xcoord] +=
                      g[((bi * oc_n + co) * oh + y * r + dy) * ow + xcoord * r + dx];
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int64_t r) {
  FGM_CHECK(x.rank() == 4, "upsample_nearest expects BCHW");
  FGM_CHECK(r >= 1, "upsample_nearest: r must be >= 1");
  int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  int64_t oh = h * r, ow = w * r;
  Tensor<T> out({b, c, oh, ow});
  auto xv = x.data();
  auto ov = out.data();
  for (int64_t bc = 0; bc < b * c; ++bc)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xcoord = 0; xcoord < ow; ++xcoord)
        ov[(bc * oh + y) * ow + xcoord] = xv[(bc * h + y / r) * w + xcoord / r];
  if (grad_needed<T>({&x})) {
    Tensor<T> xc = x, oc = out;
    mark_and_record(out, [xc, oc, b, c, h, w, oh, ow, r]() mutable {
      if (!oc.has_grad()) return;
      auto g = oc.grad();
      auto gx = xc.grad_mut();
      for (int64_t bc = 0; bc < b * c; ++bc)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t xcoord = 0; xcoord < ow; ++xcoord)
            gx[(bc * h + y / r) * w + xcoord / r] += g[(bc * oh + y) * ow + xcoord];
    });
  }
  return out;
}

#define FGM_INSTANTIATE_OPS(T)                                                            \
  template struct ConvParams<T>;                                                          \
  template struct LinearParams<T>;                                                        \
  template struct LayerNormParams<T>;                                                     \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale<T>(const Tensor<T>&, double);                                  \
  template Tensor<T> exp_op<T>(const Tensor<T>&);                                         \
  template Tensor<T> neg<T>(const Tensor<T>&);                                            \
  template Tensor<T> abs_op<T>(const Tensor<T>&);                                         \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                        \
  template Tensor<T> silu<T>(const Tensor<T>&);                                           \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                       \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                        \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                                       \
  template Tensor<T> mean_spatial<T>(const Tensor<T>&);                                   \
  template Tensor<T> mean_channel<T>(const Tensor<T>&);                                   \
  template Tensor<T> max_channel<T>(const Tensor<T>&);                                    \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                 \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                   \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int64_t, int64_t);               \
  template Tensor<T> crop2d<T>(const Tensor<T>&, int64_t, int64_t);                       \
  template Tensor<T> reflect_pad2d<T>(const Tensor<T>&, int64_t, int64_t);                \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> linear<T>(const Tensor<T>&, const LinearParams<T>&);                 \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                   \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                   double);                                               \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const LayerNormParams<T>&, double);  \
  template Tensor<T> avg_pool2d<T>(const Tensor<T>&, int64_t);                            \
  template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, int64_t);                         \
  template Tensor<T> upsample_nearest<T>(const Tensor<T>&, int64_t);

FGM_INSTANTIATE_OPS(float)
FGM_INSTANTIATE_OPS(double)
#undef FGM_INSTANTIATE_OPS

}  // namespace fgmamba
