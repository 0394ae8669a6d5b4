#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fgmamba {

using Shape = std::vector<int64_t>;

[[noreturn]] void fail(const std::string& msg);

#define FGM_CHECK(cond, msg)                     \
  do {                                           \
    if (!(cond)) ::fgmamba::fail((msg));         \
  } while (0)

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Deterministic RNG. std::mt19937_64 has a standardized bit stream; the
// <random> distributions do not, so uniform draws map raw bits directly.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_bits() { return engine_(); }
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  int64_t uniform_int(int64_t n);          // [0, n)

 private:
  std::mt19937_64 engine_;
};

// Dense N-d real tensor, row-major, canonical image layout B x C x H x W.
// Copies share storage; operations never mutate their inputs, so sharing is
// safe. The grad buffer exists only after a backward pass reached the leaf.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor from_data(Shape shape, std::vector<T> values);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
  static Tensor scalar(T value) { return from_data({1}, {value}); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size(int64_t dim) const { return shape_.at(static_cast<size_t>(dim)); }
  int64_t numel() const { return storage_ ? static_cast<int64_t>(storage_->data.size()) : 0; }

  // Spans view the underlying storage; calling them on a temporary would
  // dangle, so rvalue access is disabled.
  std::span<T> data() &;
  std::span<const T> data() const&;
  std::span<T> data() && = delete;
  std::span<const T> data() const&& = delete;

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  bool has_grad() const { return storage_ && !storage_->grad.empty(); }
  std::span<const T> grad() const&;
  std::span<const T> grad() const&& = delete;
  std::span<T> grad_mut();  // allocates zero-filled buffer on first use
  void drop_grad();

  Tensor clone() const;
  template <typename U>
  Tensor<U> cast() const;

  T item() const;
  bool all_finite() const;

  // Identity of the underlying buffer; used as an optimizer slot key.
  const void* storage_key() const { return storage_.get(); }

 private:
  struct Storage {
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  Shape shape_;
  std::shared_ptr<Storage> storage_;
};

// Reverse-mode tape: ops append backward closures during the forward pass and
// backward() replays them in reverse. One tape per forward pass, single use.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn);
  void backward(Tensor<T>& loss);
  bool consumed() const { return consumed_; }
  size_t node_count() const { return nodes_.size(); }

  static Tape* active();

 private:
  template <typename U>
  friend class TapeScope;
  static Tape*& active_slot();
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// RAII activation of a tape on the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::active_slot()) {
    Tape<T>::active_slot() = &tape;
  }
  ~TapeScope() { Tape<T>::active_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  if (!defined()) return {};
  std::vector<U> out(data().begin(), data().end());
  return Tensor<U>::from_data(shape_, std::move(out));
}

}  // namespace fgmamba
