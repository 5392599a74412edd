#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace csvt {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
class Tape;

// Dense row-major tensor. Copies share storage; values are immutable once an
// op has produced them. The grad buffer doubles as the reverse-pass
// accumulator: persistent on leaves, tape-lifetime on recorded intermediates.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != values.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match " +
                                  std::to_string(values.size()) + " values");
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.data_) x = v;
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  size_t numel() const { return data_ ? data_->size() : 0; }

  const std::vector<T>& values() const { return *data_; }
  // Off-tape mutation only (initialization, optimizer updates).
  std::vector<T>& values_mut() { return *data_; }
  T operator[](size_t i) const { return (*data_)[i]; }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }

  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_) grad_ = std::make_shared<std::vector<T>>(numel(), T(0));
    if (!on) grad_.reset();
    return *this;
  }

  bool has_grad() const { return static_cast<bool>(grad_); }

  const std::vector<T>& grad() const {
    if (!grad_) throw std::runtime_error("tensor: no grad buffer");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  // Detach from autodiff: same storage, no grad participation.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Deep copy of values; fresh grad buffer when the source tracks gradients.
  Tensor deep_copy() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    if (requires_grad_) t.set_requires_grad(true);
    return t;
  }

  // Same storage, independent grad buffer; used by data-parallel workers.
  Tensor shared_data_fresh_grad() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    if (requires_grad_) t.set_requires_grad(true);
    return t;
  }

  // --- internals used by ops and Tape ---
  std::shared_ptr<std::vector<T>> data_ptr() const { return data_; }
  std::shared_ptr<std::vector<T>> grad_ptr() const { return grad_; }
  const Tape<T>* tape() const { return tape_; }
  void attach_to_tape(const Tape<T>* tape) { tape_ = tape; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  bool requires_grad_ = false;
  const Tape<T>* tape_ = nullptr;
};

// Reverse-mode tape. Ops append backward closures in forward order; the ops'
// inputs are always recorded before the op itself, so running the closures in
// exact reverse order visits the graph in valid topological order.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_step) { nodes_.push_back(std::move(backward_step)); }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  // Populates grads on every requires_grad leaf reachable from `loss`.
  void backward(const Tensor<T>& loss) {
    if (consumed_)
      throw std::runtime_error("tape: backward called twice without reset");
    if (loss.numel() != 1)
      throw std::invalid_argument("tape: loss must be scalar, got " + shape_str(loss.shape()));
    if (loss.tape() != this || !loss.grad_ptr())
      throw std::invalid_argument("tape: loss is not recorded on this tape");
    (*loss.grad_ptr())[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    consumed_ = true;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

template <class T>
inline Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Suspends recording; forwards run value-only (teacher passes, evaluation).
template <class T>
class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape<T>()) { active_tape<T>() = nullptr; }
  ~NoGradScope() { active_tape<T>() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

// ---- forward-op instrumentation (FLOP + activation shape trace) ----

enum class OpKind : int {
  kMatmul = 0,
  kAdd,
  kMul,
  kScale,
  kBias,
  kTranspose,
  kReshape,
  kSliceConcat,
  kRelu,
  kGelu,
  kLog,
  kSoftmax,
  kLayerNorm,
  kBatchNorm,
  kL2Norm,
  kDwConv,
  kReduce,
  kImage,
  kCount
};

struct OpTrace {
  bool enabled = false;
  unsigned long long flops[static_cast<int>(OpKind::kCount)] = {};
  unsigned long long out_elems[static_cast<int>(OpKind::kCount)] = {};

  void reset() {
    for (auto& f : flops) f = 0;
    for (auto& e : out_elems) e = 0;
  }
  unsigned long long total_flops() const {
    unsigned long long t = 0;
    for (auto f : flops) t += f;
    return t;
  }
  unsigned long long total_elems() const {
    unsigned long long t = 0;
    for (auto e : out_elems) t += e;
    return t;
  }
  unsigned long long flops_of(OpKind k) const { return flops[static_cast<int>(k)]; }
  unsigned long long elems_of(OpKind k) const { return out_elems[static_cast<int>(k)]; }
};

inline OpTrace& op_trace() {
  thread_local OpTrace trace;
  return trace;
}

inline void trace_op(OpKind kind, unsigned long long flops, unsigned long long elems) {
  OpTrace& t = op_trace();
  if (!t.enabled) return;
  t.flops[static_cast<int>(kind)] += flops;
  t.out_elems[static_cast<int>(kind)] += elems;
}

struct TraceScope {
  TraceScope() {
    op_trace().reset();
    op_trace().enabled = true;
  }
  ~TraceScope() { op_trace().enabled = false; }
};

}  // namespace csvt
