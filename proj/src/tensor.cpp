#include "fgmamba/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fgmamba {

void fail(const std::string& msg) { throw std::invalid_argument(msg); }

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t extent : shape) {
    FGM_CHECK(extent >= 0, "negative extent in shape " + shape_str(shape));
    n *= extent;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

double Rng::uniform() {
  // 53 top bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t n) {
  FGM_CHECK(n > 0, "uniform_int needs n > 0");
  // Rejection-free modulo is biased only for n near 2^64; fine here, but keep
  // the draw reproducible across platforms by avoiding std distributions.
  return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  storage_ = std::make_shared<Storage>();
  storage_->data.assign(static_cast<size_t>(numel_of(shape_)), fill);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> values) {
  FGM_CHECK(numel_of(shape) == static_cast<int64_t>(values.size()),
            "from_data: shape " + shape_str(shape) + " does not match value count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.storage_ = std::make_shared<Storage>();
  t.storage_->data = std::move(values);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
std::span<T> Tensor<T>::data() & {
  FGM_CHECK(defined(), "tensor is undefined");
  return std::span<T>(storage_->data);
}

template <typename T>
std::span<const T> Tensor<T>::data() const& {
  FGM_CHECK(defined(), "tensor is undefined");
  return std::span<const T>(storage_->data);
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  FGM_CHECK(defined(), "tensor is undefined");
  storage_->requires_grad = value;
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const& {
  FGM_CHECK(has_grad(), "tensor has no gradient");
  return std::span<const T>(storage_->grad);
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() {
  FGM_CHECK(defined(), "tensor is undefined");
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), T(0));
  return std::span<T>(storage_->grad);
}

template <typename T>
void Tensor<T>::drop_grad() {
  if (storage_) storage_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  if (!defined()) return {};
  Tensor t = from_data(shape_, storage_->data);
  t.set_requires_grad(storage_->requires_grad);
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  FGM_CHECK(numel() == 1, "item() requires a scalar tensor, got " + shape_str(shape_));
  return storage_->data[0];
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
void Tape<T>::record(std::function<void()> backward_fn) {
  FGM_CHECK(!consumed_, "tape already consumed");
  nodes_.push_back(std::move(backward_fn));
}

template <typename T>
void Tape<T>::backward(Tensor<T>& loss) {
  FGM_CHECK(!consumed_, "tape already consumed");
  FGM_CHECK(loss.numel() == 1, "backward requires a scalar loss, got " + shape_str(loss.shape()));
  loss.grad_mut()[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
  consumed_ = true;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_slot();
}

template <typename T>
Tape<T>*& Tape<T>::active_slot() {
  thread_local Tape<T>* current = nullptr;
  return current;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace fgmamba
