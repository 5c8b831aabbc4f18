#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmf {

// Error hierarchy. The C API maps each class onto a status code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Dense row-major array with shared storage and optional gradient buffer.
///
/// Copies of a tensor alias the same storage. Values are treated as immutable
/// once an op has produced them; only parameters are updated in place, and
/// only between forward passes.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->data.size()); }

  std::span<const T> data() const { return s_->data; }
  // In-place access for parameter updates and initialisers.
  std::span<T> mutable_data() { return s_->data; }
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return s_->is_leaf; }

  bool has_grad() const { return s_ && !s_->grad.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  // Zero-initialised on first access; used by backward kernels to accumulate.
  std::span<T> grad_accumulator() const;
  void zero_grad();  // releases the buffer, so an untouched parameter reads as "no gradient"

  // Deep copy without autodiff history.
  BasicTensor detach_copy() const;

  TensorStorage<T>* storage() const { return s_.get(); }
  const std::shared_ptr<TensorStorage<T>>& storage_ptr() const { return s_; }

 private:
  explicit BasicTensor(std::shared_ptr<TensorStorage<T>> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage<T>> s_;

  template <typename U>
  friend class BasicTape;
  template <typename U>
  friend BasicTensor<U> make_op_result(const char*, Shape, std::vector<U>,
                                       std::vector<BasicTensor<U>>,
                                       std::function<void(const BasicTensor<U>&)>);
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& src, bool requires_grad = false);

/// Ordered record of executed differentiable ops.
template <typename T>
class BasicTape {
 public:
  using BackwardFn = std::function<void(const BasicTensor<T>& output)>;

  struct Entry {
    const char* name;
    std::vector<BasicTensor<T>> inputs;
    BasicTensor<T> output;
    BackwardFn backward;
  };

  void record(const char* name, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
              BackwardFn fn);

  // Replays the record in reverse. Leaf gradients accumulate across calls;
  // intermediate gradients are reset at the start of each call.
  void backward(const BasicTensor<T>& loss);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

using Tape = BasicTape<float>;

template <typename T>
BasicTape<T>* active_tape();

/// Makes `tape` the recording target for the current thread while alive.
template <typename T>
class BasicTapeScope {
 public:
  explicit BasicTapeScope(BasicTape<T>& tape);
  ~BasicTapeScope();
  BasicTapeScope(const BasicTapeScope&) = delete;
  BasicTapeScope& operator=(const BasicTapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

using TapeScope = BasicTapeScope<float>;

/// Backward through the thread's active tape.
template <typename T>
void backward(const BasicTensor<T>& loss);

/// Builds an op output and, when a tape is active and any input needs a
/// gradient, records `backward_fn` on it. Throws NumericError on NaN/Inf.
template <typename T>
BasicTensor<T> make_op_result(const char* name, Shape shape, std::vector<T> data,
                              std::vector<BasicTensor<T>> inputs,
                              std::function<void(const BasicTensor<T>&)> backward_fn);

}  // namespace mmf
