#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "ps/common.hpp"

namespace ps {

// Contiguous dtype-erased buffer. Exactly one of the two vectors is live.
class Storage {
 public:
  Storage() : dtype_(DType::kF32) {}
  Storage(int64_t n, DType dt) : dtype_(dt) {
    if (dt == DType::kF32)
      f32_.assign(static_cast<size_t>(n), 0.0f);
    else
      f64_.assign(static_cast<size_t>(n), 0.0);
  }

  DType dtype() const { return dtype_; }
  int64_t size() const {
    return dtype_ == DType::kF32 ? static_cast<int64_t>(f32_.size())
                                 : static_cast<int64_t>(f64_.size());
  }

  template <typename T>
  T* data();
  template <typename T>
  const T* data() const;

  double get(int64_t i) const {
    return dtype_ == DType::kF32 ? static_cast<double>(f32_[static_cast<size_t>(i)])
                                 : f64_[static_cast<size_t>(i)];
  }
  void set(int64_t i, double v) {
    if (dtype_ == DType::kF32)
      f32_[static_cast<size_t>(i)] = static_cast<float>(v);
    else
      f64_[static_cast<size_t>(i)] = v;
  }

 private:
  DType dtype_;
  std::vector<float> f32_;
  std::vector<double> f64_;
};

template <>
inline float* Storage::data<float>() {
  PS_CHECK(dtype_ == DType::kF32, "storage dtype mismatch (want f32)");
  return f32_.data();
}
template <>
inline double* Storage::data<double>() {
  PS_CHECK(dtype_ == DType::kF64, "storage dtype mismatch (want f64)");
  return f64_.data();
}
template <>
inline const float* Storage::data<float>() const {
  PS_CHECK(dtype_ == DType::kF32, "storage dtype mismatch (want f32)");
  return f32_.data();
}
template <>
inline const double* Storage::data<double>() const {
  PS_CHECK(dtype_ == DType::kF64, "storage dtype mismatch (want f64)");
  return f64_.data();
}

// Calls f with a value of the active scalar type as a tag.
template <class F>
decltype(auto) dispatch_dtype(DType dt, F&& f) {
  if (dt == DType::kF32) return f(float{});
  return f(double{});
}

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
  Shape shape;
  Storage value;
  bool requires_grad = false;
  std::unique_ptr<Storage> grad;

  // autodiff graph
  std::vector<TensorImplPtr> inputs;
  std::function<void(TensorImpl&)> backward_fn;  // consumes this->grad
  const char* op_name = "leaf";
  int64_t tape_pos = -1;

  int64_t numel() const { return shape_numel(shape); }
  Storage& ensure_grad() {
    if (!grad) grad = std::make_unique<Storage>(numel(), value.dtype());
    return *grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor empty(Shape shape, std::optional<DType> dt = {});
  static Tensor zeros(Shape shape, std::optional<DType> dt = {});
  static Tensor full(Shape shape, double v, std::optional<DType> dt = {});
  static Tensor from_vector(Shape shape, const std::vector<double>& vals,
                            std::optional<DType> dt = {});
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0,
                      std::optional<DType> dt = {});
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                             std::optional<DType> dt = {});

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const {
    return impl_->shape[static_cast<size_t>(i < 0 ? i + ndim() : i)];
  }
  int64_t numel() const { return impl_->numel(); }
  DType dtype() const { return impl_->value.dtype(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  template <typename T>
  T* data() {
    return impl_->value.data<T>();
  }
  template <typename T>
  const T* data() const {
    return impl_->value.data<T>();
  }

  double item() const {
    PS_CHECK(numel() == 1, "item() on tensor with " << numel() << " elements");
    return impl_->value.get(0);
  }
  double at(std::initializer_list<int64_t> idx) const;
  std::vector<double> to_vector() const;
  void copy_from(const std::vector<double>& vals);

  Tensor grad() const;   // undefined tensor when no grad accumulated
  void zero_grad() { impl_->grad.reset(); }
  Tensor detach() const;  // shares storage, drops graph + requires_grad
  Tensor clone() const;
  Tensor astype(DType dt) const;

  TensorImpl* impl() const { return impl_.get(); }
  const TensorImplPtr& impl_ptr() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Append-only record of op outputs in creation order (a topological order:
// inputs always precede their consumers).
class Tape {
 public:
  static Tape& get();

  void record(const TensorImplPtr& node) {
    node->tape_pos = static_cast<int64_t>(nodes_.size());
    nodes_.push_back(node);
  }
  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }
  const std::vector<TensorImplPtr>& nodes() const { return nodes_; }

  bool recording() const { return record_depth_ == 0; }
  void push_no_grad() { ++record_depth_; }
  void pop_no_grad() { --record_depth_; }

 private:
  std::vector<TensorImplPtr> nodes_;
  int record_depth_ = 0;
};

struct NoGradGuard {
  NoGradGuard() { Tape::get().push_no_grad(); }
  ~NoGradGuard() { Tape::get().pop_no_grad(); }
};

// Reverse-mode sweep from a scalar loss; accumulates into every
// requires_grad leaf reachable from it.
void backward(const Tensor& loss);

// Op construction helper: allocates the output, wires the graph and records
// on the tape when grads are needed. backward_fn may be empty for
// non-differentiable ops.
Tensor make_op(const char* name, Shape shape, DType dt,
               const std::vector<Tensor>& inputs,
               std::function<void(TensorImpl&)> backward_fn);

// Adds src into t's grad buffer (allocating it on first touch).
void accumulate_grad(TensorImpl& t, const Storage& src);

// NaN/Inf scan of a finished forward output; active when debug_checks() is on.
void debug_check(const char* op, const Tensor& t);

}  // namespace ps
