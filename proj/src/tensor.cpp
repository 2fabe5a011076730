#include "ps/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace ps {

namespace {
DType g_default_dtype = DType::kF32;
bool g_debug_checks = false;
int g_num_threads = 0;  // 0 = decide lazily from hardware
}  // namespace

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dt) { g_default_dtype = dt; }

bool debug_checks() { return g_debug_checks; }
void set_debug_checks(bool on) { g_debug_checks = on; }

int num_threads() {
  if (g_num_threads > 0) return g_num_threads;
  unsigned hw = std::thread::hardware_concurrency();
  g_num_threads = hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
  return g_num_threads;
}

void set_num_threads(int n) { g_num_threads = n < 1 ? 1 : n; }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  int nt = num_threads();
  if (nt <= 1 || n < 256) {
    body(0, n);
    return;
  }
  int workers = static_cast<int>(std::min<int64_t>(nt, n));
  int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers) - 1);
  for (int w = 1; w < workers; ++w) {
    int64_t b = w * chunk, e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    threads.emplace_back([&body, b, e] { body(b, e); });
  }
  body(0, std::min<int64_t>(chunk, n));
  for (auto& t : threads) t.join();
}

Tape& Tape::get() {
  static Tape tape;
  return tape;
}

Tensor Tensor::empty(Shape shape, std::optional<DType> dt) {
  auto impl = std::make_shared<TensorImpl>();
  DType d = dt.value_or(default_dtype());
  impl->value = Storage(shape_numel(shape), d);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, std::optional<DType> dt) {
  return empty(std::move(shape), dt);
}

Tensor Tensor::full(Shape shape, double v, std::optional<DType> dt) {
  Tensor t = empty(std::move(shape), dt);
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.impl()->value.set(i, v);
  return t;
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& vals,
                           std::optional<DType> dt) {
  PS_CHECK(shape_numel(shape) == static_cast<int64_t>(vals.size()),
           "from_vector: shape " << shape_str(shape) << " expects "
                                 << shape_numel(shape) << " values, got "
                                 << vals.size());
  Tensor t = empty(std::move(shape), dt);
  t.copy_from(vals);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, double mean,
                     std::optional<DType> dt) {
  Tensor t = empty(std::move(shape), dt);
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.impl()->value.set(i, rng.normal(mean, stddev));
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                            std::optional<DType> dt) {
  Tensor t = empty(std::move(shape), dt);
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.impl()->value.set(i, rng.uniform(lo, hi));
  return t;
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  PS_CHECK(static_cast<int>(idx.size()) == ndim(), "at(): rank mismatch");
  int64_t flat = 0;
  int i = 0;
  for (int64_t v : idx) {
    PS_CHECK(v >= 0 && v < impl_->shape[static_cast<size_t>(i)], "at(): index out of range");
    flat = flat * impl_->shape[static_cast<size_t>(i)] + v;
    ++i;
  }
  return impl_->value.get(flat);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (int64_t i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = impl_->value.get(i);
  return out;
}

void Tensor::copy_from(const std::vector<double>& vals) {
  PS_CHECK(static_cast<int64_t>(vals.size()) == numel(), "copy_from: size mismatch");
  for (int64_t i = 0; i < numel(); ++i) impl_->value.set(i, vals[static_cast<size_t>(i)]);
}

Tensor Tensor::grad() const {
  if (!impl_->grad) return Tensor();
  auto g = std::make_shared<TensorImpl>();
  g->shape = impl_->shape;
  g->value = *impl_->grad;
  return Tensor(std::move(g));
}

Tensor Tensor::detach() const {
  auto d = std::make_shared<TensorImpl>();
  d->shape = impl_->shape;
  d->value = impl_->value;  // copies the buffer; impls stay independent
  return Tensor(std::move(d));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::astype(DType dt) const {
  if (dt == dtype()) return clone();
  Tensor out = Tensor::empty(shape(), dt);
  for (int64_t i = 0; i < numel(); ++i) out.impl()->value.set(i, impl_->value.get(i));
  return out;
}

void accumulate_grad(TensorImpl& t, const Storage& src) {
  Storage& g = t.ensure_grad();
  PS_CHECK(g.size() == src.size(), "grad accumulate size mismatch");
  dispatch_dtype(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* dst = g.data<T>();
    const T* s = src.data<T>();
    int64_t n = g.size();
    for (int64_t i = 0; i < n; ++i) dst[i] += s[i];
  });
}

namespace {

void check_finite(const char* op, const Storage& s) {
  int64_t n = s.size();
  bool bad = false;
  dispatch_dtype(s.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = s.data<T>();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(static_cast<double>(p[i]))) {
        bad = true;
        return;
      }
    }
  });
  PS_CHECK(!bad, "op '" << op << "' produced NaN/Inf");
}

}  // namespace

void debug_check(const char* op, const Tensor& t) {
  if (debug_checks()) check_finite(op, t.impl()->value);
}

Tensor make_op(const char* name, Shape shape, DType dt,
               const std::vector<Tensor>& inputs,
               std::function<void(TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->value = Storage(shape_numel(shape), dt);
  impl->shape = std::move(shape);
  impl->op_name = name;
  bool needs = false;
  for (const Tensor& in : inputs)
    if (in.defined() && in.requires_grad()) needs = true;
  if (needs && Tape::get().recording() && backward_fn) {
    impl->requires_grad = true;
    impl->backward_fn = std::move(backward_fn);
    for (const Tensor& in : inputs)
      if (in.defined()) impl->inputs.push_back(in.impl_ptr());
    Tape::get().record(impl);
  }
  return Tensor(std::move(impl));
}

void backward(const Tensor& loss) {
  PS_CHECK(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar");
  TensorImpl* root = loss.impl();
  Storage& g = root->ensure_grad();
  g.set(0, 1.0);
  if (root->tape_pos < 0) return;  // loss is a leaf; nothing to propagate

  const auto& nodes = Tape::get().nodes();
  for (int64_t pos = root->tape_pos; pos >= 0; --pos) {
    TensorImpl* n = nodes[static_cast<size_t>(pos)].get();
    if (!n->grad || !n->backward_fn) continue;
    if (debug_checks()) check_finite(n->op_name, *n->grad);
    n->backward_fn(*n);
    // Intermediate grads are no longer needed once consumed; leaves keep
    // theirs for the optimizer.
    n->grad.reset();
  }
}

}  // namespace ps
