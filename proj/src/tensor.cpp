#include "mmformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mmf {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto s = std::make_shared<TensorStorage<T>>();
  s->data.assign(static_cast<std::size_t>(mmf::numel(shape)), value);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return BasicTensor(std::move(s));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (mmf::numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  auto s = std::make_shared<TensorStorage<T>>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  s->requires_grad = requires_grad;
  return BasicTensor(std::move(s));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  if (!s_) throw Error("use of undefined tensor");
  return s_->shape;
}

template <typename T>
std::int64_t BasicTensor<T>::dim(int axis) const {
  const auto& sh = shape();
  if (axis < 0) axis += static_cast<int>(sh.size());
  if (axis < 0 || axis >= static_cast<int>(sh.size()))
    throw ShapeError("axis out of range for shape " + to_string(sh));
  return sh[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return s_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::int64_t> index) const {
  const auto& sh = shape();
  if (index.size() != sh.size()) throw ShapeError("index rank mismatch");
  std::int64_t flat = 0;
  std::size_t a = 0;
  for (auto i : index) {
    if (i < 0 || i >= sh[a]) throw ShapeError("index out of range");
    flat = flat * sh[a] + i;
    ++a;
  }
  return s_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!s_->is_leaf) throw Error("requires_grad can only be toggled on leaf tensors");
  s_->requires_grad = on;
}

template <typename T>
std::span<T> BasicTensor<T>::grad_accumulator() const {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  return s_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  s_->grad.clear();
  s_->grad.shrink_to_fit();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach_copy() const {
  return from_data(shape(), s_->data, false);
}

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& src, bool requires_grad) {
  std::vector<To> out(src.data().begin(), src.data().end());
  return BasicTensor<To>::from_data(src.shape(), std::move(out), requires_grad);
}

namespace {
template <typename T>
BasicTape<T>*& tape_slot() {
  thread_local BasicTape<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
BasicTape<T>* active_tape() {
  return tape_slot<T>();
}

template <typename T>
BasicTapeScope<T>::BasicTapeScope(BasicTape<T>& tape) : previous_(tape_slot<T>()) {
  tape_slot<T>() = &tape;
}

template <typename T>
BasicTapeScope<T>::~BasicTapeScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
void BasicTape<T>::record(const char* name, std::vector<BasicTensor<T>> inputs,
                          BasicTensor<T> output, BackwardFn fn) {
  entries_.push_back(Entry{name, std::move(inputs), std::move(output), std::move(fn)});
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss");
  if (!loss.requires_grad()) throw Error("loss is not connected to any tensor requiring grad");

  for (auto& e : entries_) e.output.storage()->grad.clear();

  if (loss.is_leaf()) {
    BasicTensor<T> l = loss;
    l.grad_accumulator()[0] += T(1);
    return;
  }
  bool found = false;
  for (const auto& e : entries_)
    if (e.output.storage() == loss.storage()) found = true;
  if (!found) throw Error("loss was not recorded on this tape");

  loss.storage()->grad.assign(1, T(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.storage()->grad.empty()) continue;
    it->backward(it->output);
  }
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  auto* tape = active_tape<T>();
  if (!tape) throw Error("backward called without an active tape");
  tape->backward(loss);
}

template <typename T>
BasicTensor<T> make_op_result(const char* name, Shape shape, std::vector<T> data,
                              std::vector<BasicTensor<T>> inputs,
                              std::function<void(const BasicTensor<T>&)> backward_fn) {
  for (const T v : data)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + name);
  auto out = BasicTensor<T>::from_data(std::move(shape), std::move(data), false);
  auto* tape = active_tape<T>();
  if (!tape) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.s_->requires_grad = true;
  out.s_->is_leaf = false;
  std::vector<BasicTensor<T>> kept;
  for (const auto& in : inputs)
    if (in.defined()) kept.push_back(in);
  tape->record(name, std::move(kept), out, std::move(backward_fn));
  return out;
}

#define MMF_INSTANTIATE(T)                                                                  \
  template class BasicTensor<T>;                                                            \
  template class BasicTape<T>;                                                              \
  template class BasicTapeScope<T>;                                                         \
  template BasicTape<T>* active_tape<T>();                                                  \
  template void backward<T>(const BasicTensor<T>&);                                         \
  template BasicTensor<T> make_op_result<T>(const char*, Shape, std::vector<T>,            \
                                            std::vector<BasicTensor<T>>,          \
                                            std::function<void(const BasicTensor<T>&)>);

MMF_INSTANTIATE(float)
MMF_INSTANTIATE(double)
#undef MMF_INSTANTIATE

template BasicTensor<double> cast<double, float>(const BasicTensor<float>&, bool);
template BasicTensor<float> cast<float, double>(const BasicTensor<double>&, bool);
template BasicTensor<float> cast<float, float>(const BasicTensor<float>&, bool);
template BasicTensor<double> cast<double, double>(const BasicTensor<double>&, bool);

}  // namespace mmf
