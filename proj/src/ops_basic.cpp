#include <algorithm>
#include <cmath>
#include <cstring>

#include "ps/ops.hpp"

namespace ps {

namespace {

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// strides of `in` laid over the broadcast output rank; 0 where broadcast
std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto in_st = contiguous_strides(in);
  int off = static_cast<int>(out.size() - in.size());
  for (size_t i = 0; i < in.size(); ++i) {
    if (in[i] != 1) st[static_cast<size_t>(off) + i] = in_st[i];
  }
  return st;
}

// Walks the output space once, handing (flat_out, flat_a, flat_b) to fn.
template <class Fn>
void bcast_walk(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  int64_t n = shape_numel(out);
  auto sa = bcast_strides(a, out);
  auto sb = bcast_strides(b, out);
  size_t rank = out.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    fn(flat, ia, ib);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      size_t du = static_cast<size_t>(d);
      if (++idx[du] < out[du]) {
        ia += sa[du];
        ib += sb[du];
        break;
      }
      idx[du] = 0;
      ia -= sa[du] * (out[du] - 1);
      ib -= sb[du] * (out[du] - 1);
    }
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Sums `g` (shaped `out`) down to `target`, right-aligned.
Storage reduce_to_shape(const Storage& g, const Shape& out, const Shape& target) {
  Storage r(shape_numel(target), g.dtype());
  if (out == target) {
    r = g;
    return r;
  }
  dispatch_dtype(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* src = g.data<T>();
    T* dst = r.data<T>();
    if (is_suffix(target, out)) {
      int64_t inner = shape_numel(target);
      int64_t reps = shape_numel(out) / std::max<int64_t>(inner, 1);
      for (int64_t rix = 0; rix < reps; ++rix)
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[rix * inner + i];
      return;
    }
    bcast_walk(out, target, target, [&](int64_t flat, int64_t it, int64_t) {
      dst[it] += src[flat];
    });
  });
  return r;
}

template <class F>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f,
                 std::function<void(TensorImpl&)> bw) {
  PS_CHECK(a.dtype() == b.dtype(), name << ": dtype mismatch");
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out = make_op(name, out_shape, a.dtype(), {a, b}, std::move(bw));
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    if (a.shape() == b.shape()) {
      int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) po[i] = static_cast<T>(f(pa[i], pb[i]));
    } else if (b.numel() == 1) {
      int64_t n = out.numel();
      double s = static_cast<double>(pb[0]);
      for (int64_t i = 0; i < n; ++i) po[i] = static_cast<T>(f(pa[i], s));
    } else if (is_suffix(b.shape(), a.shape())) {
      int64_t inner = b.numel();
      int64_t reps = out.numel() / inner;
      for (int64_t r = 0; r < reps; ++r) {
        const T* pr = pa + r * inner;
        T* pp = po + r * inner;
        for (int64_t i = 0; i < inner; ++i) pp[i] = static_cast<T>(f(pr[i], pb[i]));
      }
    } else {
      bcast_walk(out.shape(), a.shape(), b.shape(),
                 [&](int64_t flat, int64_t ia, int64_t ib) {
                   po[flat] = static_cast<T>(f(pa[ia], pb[ib]));
                 });
    }
  });
  debug_check(name, out);
  return out;
}

// Per-element grad factors in output space, reduced back to each input.
template <class GradFn>
std::function<void(TensorImpl&)> binary_backward(const Tensor& a, const Tensor& b,
                                                 GradFn gf) {
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return [ai, bi, gf](TensorImpl& self) {
    const Storage& g = *self.grad;
    Shape out_shape = self.shape;
    dispatch_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = g.data<T>();
      const T* pa = ai->value.data<T>();
      const T* pb = bi->value.data<T>();
      bool need_a = ai->requires_grad;
      bool need_b = bi->requires_grad;
      Storage ga_full(need_a ? shape_numel(out_shape) : 0, g.dtype());
      Storage gb_full(need_b ? shape_numel(out_shape) : 0, g.dtype());
      T* pga = need_a ? ga_full.data<T>() : nullptr;
      T* pgb = need_b ? gb_full.data<T>() : nullptr;
      bcast_walk(out_shape, ai->shape, bi->shape,
                 [&](int64_t flat, int64_t ia, int64_t ib) {
                   double da, db;
                   gf(static_cast<double>(pa[ia]), static_cast<double>(pb[ib]),
                      static_cast<double>(pg[flat]), da, db);
                   if (pga) pga[flat] = static_cast<T>(da);
                   if (pgb) pgb[flat] = static_cast<T>(db);
                 });
      if (need_a)
        accumulate_grad(*ai, reduce_to_shape(ga_full, out_shape, ai->shape));
      if (need_b)
        accumulate_grad(*bi, reduce_to_shape(gb_full, out_shape, bi->shape));
    });
  };
}

template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  auto ai = a.impl_ptr();
  auto bw = [ai, df](TensorImpl& self) {
    if (!ai->requires_grad) return;
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      const T* px = ai->value.data<T>();
      const T* py = self.value.data<T>();
      Storage gx(self.numel(), self.value.dtype());
      T* pgx = gx.data<T>();
      int64_t n = self.numel();
      for (int64_t i = 0; i < n; ++i)
        pgx[i] = static_cast<T>(static_cast<double>(pg[i]) *
                                df(static_cast<double>(px[i]), static_cast<double>(py[i])));
      accumulate_grad(*ai, gx);
    });
  };
  Tensor out = make_op(name, a.shape(), a.dtype(), {a}, bw);
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = static_cast<T>(f(static_cast<double>(pa[i])));
  });
  debug_check(name, out);
  return out;
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    PS_CHECK(da == db || da == 1 || db == 1,
             "broadcast: incompatible shapes " << shape_str(a) << " vs " << shape_str(b));
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      binary_backward(a, b, [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      binary_backward(a, b, [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      binary_backward(a, b, [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      }));
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      binary_backward(a, b, [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      }));
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      "add_scalar", a, [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      "mul_scalar", a, [s](double x) { return x * s; },
      [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary_op(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

// ----- shape ops -----

Tensor reshape(const Tensor& t, Shape shape) {
  int64_t known = 1;
  int wild = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      PS_CHECK(wild < 0, "reshape: more than one -1 extent");
      wild = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (wild >= 0) {
    PS_CHECK(known > 0 && t.numel() % known == 0,
             "reshape: cannot infer extent for " << shape_str(shape));
    shape[static_cast<size_t>(wild)] = t.numel() / known;
  }
  PS_CHECK(shape_numel(shape) == t.numel(),
           "reshape: " << shape_str(t.shape()) << " -> " << shape_str(shape));
  auto ti = t.impl_ptr();
  Tensor out = make_op("reshape", shape, t.dtype(), {t}, [ti](TensorImpl& self) {
    if (ti->requires_grad) accumulate_grad(*ti, *self.grad);
  });
  out.impl()->value = t.impl()->value;
  return out;
}

Tensor permute(const Tensor& t, const std::vector<int>& dims) {
  PS_CHECK(static_cast<int>(dims.size()) == t.ndim(), "permute: rank mismatch");
  Shape out_shape(dims.size());
  std::vector<bool> seen(dims.size(), false);
  for (size_t i = 0; i < dims.size(); ++i) {
    int d = dims[i];
    PS_CHECK(d >= 0 && d < t.ndim() && !seen[static_cast<size_t>(d)],
             "permute: bad axis list");
    seen[static_cast<size_t>(d)] = true;
    out_shape[i] = t.shape()[static_cast<size_t>(d)];
  }
  auto ti = t.impl_ptr();
  std::vector<int> inv(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) inv[static_cast<size_t>(dims[i])] = static_cast<int>(i);

  auto run = [](const Storage& src, const Shape& in_shape, const std::vector<int>& dm,
                Storage& dst, const Shape& dst_shape) {
    auto in_st = contiguous_strides(in_shape);
    size_t rank = dst_shape.size();
    std::vector<int64_t> src_stride(rank);
    for (size_t i = 0; i < rank; ++i)
      src_stride[i] = in_st[static_cast<size_t>(dm[i])];
    dispatch_dtype(src.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* ps = src.data<T>();
      T* pd = dst.data<T>();
      std::vector<int64_t> idx(rank, 0);
      int64_t isrc = 0;
      int64_t n = shape_numel(dst_shape);
      for (int64_t flat = 0; flat < n; ++flat) {
        pd[flat] = ps[isrc];
        for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
          size_t du = static_cast<size_t>(d);
          if (++idx[du] < dst_shape[du]) {
            isrc += src_stride[du];
            break;
          }
          idx[du] = 0;
          isrc -= src_stride[du] * (dst_shape[du] - 1);
        }
      }
    });
  };

  Shape in_shape = t.shape();
  auto bw = [ti, inv, run, out_shape](TensorImpl& self) {
    if (!ti->requires_grad) return;
    Storage gi(ti->numel(), self.value.dtype());
    run(*self.grad, self.shape, inv, gi, ti->shape);
    accumulate_grad(*ti, gi);
  };
  Tensor out = make_op("permute", out_shape, t.dtype(), {t}, bw);
  run(t.impl()->value, in_shape, dims, out.impl()->value, out.shape());
  return out;
}

Tensor slice(const Tensor& t, int dim, int64_t start, int64_t len) {
  PS_CHECK(dim >= 0 && dim < t.ndim(), "slice: bad dim");
  int64_t extent = t.shape()[static_cast<size_t>(dim)];
  PS_CHECK(start >= 0 && len >= 0 && start + len <= extent,
           "slice: range [" << start << "," << start + len << ") out of extent " << extent);
  Shape out_shape = t.shape();
  out_shape[static_cast<size_t>(dim)] = len;
  int64_t inner = 1;
  for (int i = dim + 1; i < t.ndim(); ++i) inner *= t.shape()[static_cast<size_t>(i)];
  int64_t outer = t.numel() / (extent * inner);

  auto ti = t.impl_ptr();
  auto bw = [ti, dim, start, len, extent, inner, outer](TensorImpl& self) {
    if (!ti->requires_grad) return;
    Storage gi(ti->numel(), self.value.dtype());
    dispatch_dtype(gi.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      T* pd = gi.data<T>();
      for (int64_t o = 0; o < outer; ++o) {
        const T* src = pg + o * len * inner;
        T* dst = pd + (o * extent + start) * inner;
        std::memcpy(dst, src, static_cast<size_t>(len * inner) * sizeof(T));
      }
    });
    accumulate_grad(*ti, gi);
  };
  Tensor out = make_op("slice", out_shape, t.dtype(), {t}, bw);
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* psrc = t.data<T>();
    T* pd = out.data<T>();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(pd + o * len * inner, psrc + (o * extent + start) * inner,
                  static_cast<size_t>(len * inner) * sizeof(T));
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& ts, int dim) {
  PS_CHECK(!ts.empty(), "concat: empty input list");
  const Tensor& t0 = ts[0];
  PS_CHECK(dim >= 0 && dim < t0.ndim(), "concat: bad dim");
  int64_t total = 0;
  for (const Tensor& t : ts) {
    PS_CHECK(t.ndim() == t0.ndim() && t.dtype() == t0.dtype(), "concat: rank/dtype mismatch");
    for (int i = 0; i < t0.ndim(); ++i)
      PS_CHECK(i == dim || t.shape()[static_cast<size_t>(i)] == t0.shape()[static_cast<size_t>(i)],
               "concat: shape mismatch at dim " << i);
    total += t.shape()[static_cast<size_t>(dim)];
  }
  Shape out_shape = t0.shape();
  out_shape[static_cast<size_t>(dim)] = total;
  int64_t inner = 1;
  for (int i = dim + 1; i < t0.ndim(); ++i) inner *= t0.shape()[static_cast<size_t>(i)];
  int64_t outer = shape_numel(out_shape) / (total * inner);

  std::vector<TensorImplPtr> impls;
  std::vector<int64_t> extents;
  for (const Tensor& t : ts) {
    impls.push_back(t.impl_ptr());
    extents.push_back(t.shape()[static_cast<size_t>(dim)]);
  }
  auto bw = [impls, extents, total, inner, outer](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      int64_t off = 0;
      for (size_t k = 0; k < impls.size(); ++k) {
        int64_t ext = extents[k];
        if (impls[k]->requires_grad) {
          Storage gi(impls[k]->numel(), self.value.dtype());
          T* pd = gi.data<T>();
          for (int64_t o = 0; o < outer; ++o)
            std::memcpy(pd + o * ext * inner, pg + (o * total + off) * inner,
                        static_cast<size_t>(ext * inner) * sizeof(T));
          accumulate_grad(*impls[k], gi);
        }
        off += ext;
      }
    });
  };
  Tensor out = make_op("concat", out_shape, t0.dtype(), ts, bw);
  dispatch_dtype(t0.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* pd = out.data<T>();
    int64_t off = 0;
    for (size_t k = 0; k < ts.size(); ++k) {
      const T* psrc = ts[k].data<T>();
      int64_t ext = extents[k];
      for (int64_t o = 0; o < outer; ++o)
        std::memcpy(pd + (o * total + off) * inner, psrc + o * ext * inner,
                    static_cast<size_t>(ext * inner) * sizeof(T));
      off += ext;
    }
  });
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, int dim, int64_t parts) {
  PS_CHECK(dim >= 0 && dim < t.ndim(), "split: bad dim");
  int64_t extent = t.shape()[static_cast<size_t>(dim)];
  PS_CHECK(parts > 0 && extent % parts == 0,
           "split: extent " << extent << " not divisible into " << parts << " parts");
  int64_t step = extent / parts;
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(parts));
  for (int64_t p = 0; p < parts; ++p) out.push_back(slice(t, dim, p * step, step));
  return out;
}

// ----- reductions -----

Tensor sum(const Tensor& t) {
  auto ti = t.impl_ptr();
  auto bw = [ti](TensorImpl& self) {
    if (!ti->requires_grad) return;
    Storage gi(ti->numel(), self.value.dtype());
    double g = self.grad->get(0);
    for (int64_t i = 0; i < gi.size(); ++i) gi.set(i, g);
    accumulate_grad(*ti, gi);
  };
  Tensor out = make_op("sum", {1}, t.dtype(), {t}, bw);
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = t.data<T>();
    // extended precision keeps finite-difference probes out of reduction noise
    long double acc = 0.0;
    int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) acc += static_cast<long double>(p[i]);
    out.impl()->value.set(0, static_cast<double>(acc));
  });
  return out;
}

Tensor sum_axis(const Tensor& t, int axis, bool keepdim) {
  if (axis < 0) axis += t.ndim();
  PS_CHECK(axis >= 0 && axis < t.ndim(), "sum_axis: bad axis");
  int64_t ax = t.shape()[static_cast<size_t>(axis)];
  int64_t inner = 1;
  for (int i = axis + 1; i < t.ndim(); ++i) inner *= t.shape()[static_cast<size_t>(i)];
  int64_t outer = t.numel() / (ax * inner);
  Shape out_shape;
  for (int i = 0; i < t.ndim(); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(t.shape()[static_cast<size_t>(i)]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  auto ti = t.impl_ptr();
  auto bw = [ti, ax, inner, outer](TensorImpl& self) {
    if (!ti->requires_grad) return;
    Storage gi(ti->numel(), self.value.dtype());
    dispatch_dtype(gi.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      T* pd = gi.data<T>();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < ax; ++a)
          for (int64_t i = 0; i < inner; ++i)
            pd[(o * ax + a) * inner + i] = pg[o * inner + i];
    });
    accumulate_grad(*ti, gi);
  };
  Tensor out = make_op("sum_axis", out_shape, t.dtype(), {t}, bw);
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = t.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        double acc = 0.0;
        for (int64_t a = 0; a < ax; ++a)
          acc += static_cast<double>(p[(o * ax + a) * inner + i]);
        po[o * inner + i] = static_cast<T>(acc);
      }
  });
  return out;
}

Tensor mean(const Tensor& t) { return mul_scalar(sum(t), 1.0 / static_cast<double>(t.numel())); }

// ----- gemm -----

namespace {

// C[M,N] (+)= op(A) * op(B); per-output accumulation order is fixed, so
// results are bit-identical for any thread count.
template <typename T>
void gemm_range(bool ta, bool tb, int64_t i0, int64_t i1, int64_t N, int64_t K,
                const T* A, const T* B, T* C, int64_t lda, int64_t ldb) {
  if (!ta && !tb) {
    for (int64_t i = i0; i < i1; ++i) {
      T* c = C + i * N;
      std::memset(c, 0, static_cast<size_t>(N) * sizeof(T));
      const T* arow = A + i * lda;
      for (int64_t k = 0; k < K; ++k) {
        T a = arow[k];
        const T* brow = B + k * ldb;
        for (int64_t j = 0; j < N; ++j) c[j] += a * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* arow = A + i * lda;
      T* c = C + i * N;
      for (int64_t j = 0; j < N; ++j) {
        const T* brow = B + j * ldb;
        T acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
        c[j] = acc;
      }
    }
  } else if (ta && !tb) {
    for (int64_t i = i0; i < i1; ++i) {
      T* c = C + i * N;
      std::memset(c, 0, static_cast<size_t>(N) * sizeof(T));
      for (int64_t k = 0; k < K; ++k) {
        T a = A[k * lda + i];
        const T* brow = B + k * ldb;
        for (int64_t j = 0; j < N; ++j) c[j] += a * brow[j];
      }
    }
  } else {
    for (int64_t i = i0; i < i1; ++i) {
      T* c = C + i * N;
      for (int64_t j = 0; j < N; ++j) {
        T acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += A[k * lda + i] * B[j * ldb + k];
        c[j] = acc;
      }
    }
  }
}

template <typename T>
void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, const T* A, const T* B,
          T* C) {
  int64_t lda = ta ? M : K;
  int64_t ldb = tb ? K : N;
  if (M * N * K >= (1 << 15)) {
    parallel_for(M, [&](int64_t i0, int64_t i1) {
      gemm_range(ta, tb, i0, i1, N, K, A, B, C, lda, ldb);
    });
  } else {
    gemm_range(ta, tb, 0, M, N, K, A, B, C, lda, ldb);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  PS_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul: expects 2-D operands");
  PS_CHECK(a.dim(1) == b.dim(0), "matmul: inner dims " << a.dim(1) << " vs " << b.dim(0));
  PS_CHECK(a.dtype() == b.dtype(), "matmul: dtype mismatch");
  int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  auto bw = [ai, bi, M, K, N](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      if (ai->requires_grad) {
        Storage ga(M * K, self.value.dtype());
        gemm<T>(false, true, M, K, N, pg, bi->value.data<T>(), ga.data<T>());
        accumulate_grad(*ai, ga);
      }
      if (bi->requires_grad) {
        Storage gb(K * N, self.value.dtype());
        gemm<T>(true, false, K, N, M, ai->value.data<T>(), pg, gb.data<T>());
        accumulate_grad(*bi, gb);
      }
    });
  };
  Tensor out = make_op("matmul", {M, N}, a.dtype(), {a, b}, bw);
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    gemm<T>(false, false, M, N, K, a.data<T>(), b.data<T>(), out.data<T>());
  });
  debug_check("matmul", out);
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  PS_CHECK(a.ndim() == 3 && b.ndim() == 3, "bmm: expects 3-D operands");
  PS_CHECK(a.dim(0) == b.dim(0), "bmm: batch mismatch");
  PS_CHECK(a.dtype() == b.dtype(), "bmm: dtype mismatch");
  int64_t B = a.dim(0);
  int64_t M = trans_a ? a.dim(2) : a.dim(1);
  int64_t Ka = trans_a ? a.dim(1) : a.dim(2);
  int64_t Kb = trans_b ? b.dim(2) : b.dim(1);
  int64_t N = trans_b ? b.dim(1) : b.dim(2);
  PS_CHECK(Ka == Kb, "bmm: inner dims " << Ka << " vs " << Kb);
  int64_t K = Ka;
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  auto bw = [ai, bi, B, M, N, K, trans_a, trans_b](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      int64_t an = M * K, bn = K * N, on = M * N;
      if (ai->requires_grad) {
        Storage ga(B * an, self.value.dtype());
        T* pga = ga.data<T>();
        parallel_for(B, [&](int64_t s, int64_t e) {
          for (int64_t x = s; x < e; ++x) {
            const T* pb = bi->value.data<T>() + x * bn;
            const T* g = pg + x * on;
            // dA = G * op(B)^T  (or its transpose when A is transposed)
            if (!trans_a)
              gemm_range<T>(false, !trans_b, 0, M, K, N, g, pb, pga + x * an,
                            N, trans_b ? K : N);
            else
              gemm_range<T>(trans_b, true, 0, K, M, N, pb, g, pga + x * an,
                            trans_b ? K : N, N);
          }
        });
        accumulate_grad(*ai, ga);
      }
      if (bi->requires_grad) {
        Storage gb(B * bn, self.value.dtype());
        T* pgb = gb.data<T>();
        parallel_for(B, [&](int64_t s, int64_t e) {
          for (int64_t x = s; x < e; ++x) {
            const T* pa = ai->value.data<T>() + x * an;
            const T* g = pg + x * on;
            if (!trans_b)
              gemm_range<T>(!trans_a, false, 0, K, N, M, pa, g, pgb + x * bn,
                            trans_a ? M : K, N);
            else
              gemm_range<T>(true, trans_a, 0, N, K, M, g, pa, pgb + x * bn, N,
                            trans_a ? M : K);
          }
        });
        accumulate_grad(*bi, gb);
      }
    });
  };
  Tensor out = make_op("bmm", {B, M, N}, a.dtype(), {a, b}, bw);
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    int64_t an = M * K, bn = K * N, on = M * N;
    parallel_for(B, [&](int64_t s, int64_t e) {
      for (int64_t x = s; x < e; ++x)
        gemm_range<T>(trans_a, trans_b, 0, M, N, K, pa + x * an, pb + x * bn,
                      po + x * on, trans_a ? M : K, trans_b ? K : N);
    });
  });
  debug_check("bmm", out);
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  PS_CHECK(w.ndim() == 2, "linear: weight must be [out, in]");
  int64_t in = w.dim(1), outf = w.dim(0);
  PS_CHECK(x.dim(-1) == in, "linear: input features " << x.dim(-1) << " vs weight " << in);
  if (b.defined()) PS_CHECK(b.numel() == outf, "linear: bias size mismatch");
  int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;

  auto xi = x.impl_ptr();
  auto wi = w.impl_ptr();
  TensorImplPtr bi = b.defined() ? b.impl_ptr() : nullptr;
  auto bw = [xi, wi, bi, rows, in, outf](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      if (xi->requires_grad) {
        Storage gx(rows * in, self.value.dtype());
        gemm<T>(false, false, rows, in, outf, pg, wi->value.data<T>(), gx.data<T>());
        accumulate_grad(*xi, gx);
      }
      if (wi->requires_grad) {
        Storage gw(outf * in, self.value.dtype());
        gemm<T>(true, false, outf, in, rows, pg, xi->value.data<T>(), gw.data<T>());
        accumulate_grad(*wi, gw);
      }
      if (bi && bi->requires_grad) {
        Storage gb(outf, self.value.dtype());
        T* pgb = gb.data<T>();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < outf; ++j) pgb[j] += pg[r * outf + j];
        accumulate_grad(*bi, gb);
      }
    });
  };
  std::vector<Tensor> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  Tensor out = make_op("linear", out_shape, x.dtype(), inputs, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    gemm<T>(false, true, rows, outf, in, x.data<T>(), w.data<T>(), out.data<T>());
    if (b.defined()) {
      T* po = out.data<T>();
      const T* pb = b.data<T>();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < outf; ++j) po[r * outf + j] += pb[j];
    }
  });
  debug_check("linear", out);
  return out;
}

Tensor softmax(const Tensor& t) {
  int64_t C = t.dim(-1);
  int64_t rows = t.numel() / C;
  auto ti = t.impl_ptr();
  auto bw = [ti, rows, C](TensorImpl& self) {
    if (!ti->requires_grad) return;
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      const T* py = self.value.data<T>();
      Storage gx(rows * C, self.value.dtype());
      T* pgx = gx.data<T>();
      for (int64_t r = 0; r < rows; ++r) {
        const T* g = pg + r * C;
        const T* y = py + r * C;
        double dot = 0.0;
        for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(g[c]) * y[c];
        T* o = pgx + r * C;
        for (int64_t c = 0; c < C; ++c)
          o[c] = static_cast<T>((static_cast<double>(g[c]) - dot) * y[c]);
      }
      accumulate_grad(*ti, gx);
    });
  };
  Tensor out = make_op("softmax", t.shape(), t.dtype(), {t}, bw);
  dispatch_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = t.data<T>();
    T* po = out.data<T>();
    parallel_for(rows, [&](int64_t s, int64_t e) {
      for (int64_t r = s; r < e; ++r) {
        const T* x = p + r * C;
        T* y = po + r * C;
        double mx = static_cast<double>(x[0]);
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(x[c]));
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          double v = std::exp(static_cast<double>(x[c]) - mx);
          y[c] = static_cast<T>(v);
          sum += v;
        }
        double inv = 1.0 / sum;
        for (int64_t c = 0; c < C; ++c) y[c] = static_cast<T>(static_cast<double>(y[c]) * inv);
      }
    });
  });
  debug_check("softmax", out);
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& idx) {
  PS_CHECK(table.ndim() == 2, "gather_rows: table must be 2-D");
  int64_t R = table.dim(0), C = table.dim(1);
  for (int64_t i : idx) PS_CHECK(i >= 0 && i < R, "gather_rows: index " << i << " out of " << R);
  int64_t N = static_cast<int64_t>(idx.size());
  auto ti = table.impl_ptr();
  auto idx_copy = idx;
  auto bw = [ti, idx_copy, C](TensorImpl& self) {
    if (!ti->requires_grad) return;
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      Storage gt(ti->numel(), self.value.dtype());
      T* pd = gt.data<T>();
      const T* pg = self.grad->data<T>();
      for (size_t n = 0; n < idx_copy.size(); ++n) {
        T* row = pd + idx_copy[n] * C;
        const T* g = pg + static_cast<int64_t>(n) * C;
        for (int64_t c = 0; c < C; ++c) row[c] += g[c];
      }
      accumulate_grad(*ti, gt);
    });
  };
  Tensor out = make_op("gather_rows", {N, C}, table.dtype(), {table}, bw);
  dispatch_dtype(table.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pt = table.data<T>();
    T* po = out.data<T>();
    for (int64_t n = 0; n < N; ++n)
      std::memcpy(po + n * C, pt + idx[static_cast<size_t>(n)] * C,
                  static_cast<size_t>(C) * sizeof(T));
  });
  return out;
}

}  // namespace ps
