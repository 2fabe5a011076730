#include "ps/module.hpp"

#include <cmath>

namespace ps {

namespace {
bool g_train_mode = false;
}

bool train_mode() { return g_train_mode; }
void set_train_mode(bool on) { g_train_mode = on; }

namespace init {

Tensor normal(Shape shape, Rng& rng, double stddev) {
  return Tensor::randn(std::move(shape), rng, stddev);
}

Tensor uniform(Shape shape, Rng& rng, double bound) {
  return Tensor::rand_uniform(std::move(shape), rng, -bound, bound);
}

Tensor lecun_uniform(Shape shape, Rng& rng, int64_t fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform(std::move(shape), rng, bound);
}

Tensor xavier_uniform(Shape shape, Rng& rng, int64_t fan_in, int64_t fan_out) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(std::move(shape), rng, bound);
}

}  // namespace init

Linear::Linear(int64_t in, int64_t out, Rng& rng, bool has_bias) {
  weight = init::lecun_uniform({out, in}, rng, in).set_requires_grad(true);
  if (has_bias) bias = init::lecun_uniform({out}, rng, in).set_requires_grad(true);
}

void Linear::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, true, false});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true, true});
}

Conv2d::Conv2d(int64_t cin, int64_t cout, int k, int stride_, int padding_, int groups_,
               Rng& rng, bool has_bias)
    : stride(stride_), padding(padding_), groups(groups_) {
  int64_t cing = cin / groups_;
  int64_t fan_in = cing * k * k;
  weight = init::lecun_uniform({cout, cing, k, k}, rng, fan_in).set_requires_grad(true);
  if (has_bias) bias = init::lecun_uniform({cout}, rng, fan_in).set_requires_grad(true);
}

void Conv2d::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, true, false});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true, true});
}

ConvTranspose2x2::ConvTranspose2x2(int64_t cin, int64_t cout, Rng& rng, bool has_bias) {
  int64_t fan_in = cin;  // each output pixel sees one input location per channel
  weight = init::lecun_uniform({cin, cout, 2, 2}, rng, fan_in).set_requires_grad(true);
  if (has_bias) bias = init::lecun_uniform({cout}, rng, fan_in).set_requires_grad(true);
}

void ConvTranspose2x2::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, true, false});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true, true});
}

LayerNorm::LayerNorm(int64_t dim, int axis_) : axis(axis_) {
  gamma = Tensor::full({dim}, 1.0).set_requires_grad(true);
  beta = Tensor::zeros({dim}).set_requires_grad(true);
}

void LayerNorm::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", gamma, true, true});
  out.push_back({prefix + ".bias", beta, true, true});
}

BatchNorm2d::BatchNorm2d(int64_t channels) {
  gamma = Tensor::full({channels}, 1.0).set_requires_grad(true);
  beta = Tensor::zeros({channels}).set_requires_grad(true);
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::full({channels}, 1.0);
}

void BatchNorm2d::params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", gamma, true, true});
  out.push_back({prefix + ".bias", beta, true, true});
  out.push_back({prefix + ".running_mean", running_mean, false, true});
  out.push_back({prefix + ".running_var", running_var, false, true});
}

MultiheadAttention::MultiheadAttention(int64_t embed_dim, int64_t heads, Rng& rng)
    : q_proj(embed_dim, embed_dim, rng),
      k_proj(embed_dim, embed_dim, rng),
      v_proj(embed_dim, embed_dim, rng),
      out_proj(embed_dim, embed_dim, rng),
      num_heads(heads) {
  PS_CHECK(embed_dim % heads == 0, "attention: embed_dim % num_heads != 0");
}

namespace {

// [B,N,D] -> [B*h, N, dh]
Tensor to_heads(const Tensor& t, int64_t h) {
  int64_t B = t.dim(0), N = t.dim(1), D = t.dim(2);
  Tensor r = reshape(t, {B, N, h, D / h});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {B * h, N, D / h});
}

Tensor from_heads(const Tensor& t, int64_t B, int64_t h) {
  int64_t N = t.dim(1), dh = t.dim(2);
  Tensor r = reshape(t, {B, h, N, dh});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {B, N, h * dh});
}

}  // namespace

Tensor MultiheadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Tensor& attn_mask, const Tensor& rel_bias) const {
  int64_t B = q.dim(0), Nq = q.dim(1), D = q.dim(2);
  int64_t Nk = k.dim(1);
  PS_CHECK(D == q_proj.in_features(), "attention: embed dim mismatch");
  int64_t h = num_heads, dh = D / h;

  Tensor qh = to_heads(mul_scalar(q_proj.forward(q), 1.0 / std::sqrt(static_cast<double>(dh))), h);
  Tensor kh = to_heads(k_proj.forward(k), h);
  Tensor vh = to_heads(v_proj.forward(v), h);

  Tensor scores = bmm(qh, kh, false, true);  // [B*h, Nq, Nk]
  if (rel_bias.defined()) {
    Tensor s4 = reshape(scores, {B, h, Nq, Nk});
    s4 = add(s4, rel_bias);  // [h,Nq,Nk] broadcasts over batch
    scores = reshape(s4, {B * h, Nq, Nk});
  }
  if (attn_mask.defined()) {
    PS_CHECK(attn_mask.ndim() == 3 && attn_mask.dim(0) == B && attn_mask.dim(1) == Nq &&
                 attn_mask.dim(2) == Nk,
             "attention: mask must be [B,Nq,Nk]");
    // all-masked rows fall back to fully unmasked
    Tensor safe = attn_mask.detach();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t r = 0; r < Nq; ++r) {
        bool all_masked = true;
        for (int64_t c = 0; c < Nk; ++c)
          if (safe.impl()->value.get((b * Nq + r) * Nk + c) > kMaskedValue / 2) {
            all_masked = false;
            break;
          }
        if (all_masked)
          for (int64_t c = 0; c < Nk; ++c) safe.impl()->value.set((b * Nq + r) * Nk + c, 0.0);
      }
    Tensor s4 = reshape(scores, {B, h, Nq, Nk});
    s4 = add(s4, reshape(safe, {B, 1, Nq, Nk}));
    scores = reshape(s4, {B * h, Nq, Nk});
  }
  Tensor probs = softmax(scores);
  Tensor out = from_heads(bmm(probs, vh), B, h);
  return out_proj.forward(out);
}

void MultiheadAttention::params(const std::string& prefix, ParamList& out) const {
  q_proj.params(prefix + ".q", out);
  k_proj.params(prefix + ".k", out);
  v_proj.params(prefix + ".v", out);
  out_proj.params(prefix + ".out", out);
}

Tensor bilinear_resize(const Tensor& x, int64_t oh, int64_t ow) {
  PS_CHECK(x.ndim() == 4, "bilinear_resize: input must be [B,C,H,W]");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (oh == H && ow == W) return reshape(x, x.shape());
  struct Map {
    std::vector<int64_t> i0, i1;
    std::vector<double> t;
  };
  auto make = [](int64_t in, int64_t on) {
    Map m;
    m.i0.resize(static_cast<size_t>(on));
    m.i1.resize(static_cast<size_t>(on));
    m.t.resize(static_cast<size_t>(on));
    double s = static_cast<double>(in) / static_cast<double>(on);
    for (int64_t o = 0; o < on; ++o) {
      double src = (static_cast<double>(o) + 0.5) * s - 0.5;
      double f = std::floor(src);
      int64_t a = static_cast<int64_t>(f);
      m.i0[static_cast<size_t>(o)] = std::clamp<int64_t>(a, 0, in - 1);
      m.i1[static_cast<size_t>(o)] = std::clamp<int64_t>(a + 1, 0, in - 1);
      m.t[static_cast<size_t>(o)] = src - f;
    }
    return m;
  };
  auto ym = std::make_shared<Map>(make(H, oh));
  auto xm = std::make_shared<Map>(make(W, ow));

  auto xi = x.impl_ptr();
  auto bw = [=](TensorImpl& self) {
    if (!xi->requires_grad) return;
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      Storage gxs(xi->numel(), self.value.dtype());
      T* gx = gxs.data<T>();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* g = pg + bc * oh * ow;
        T* d = gx + bc * H * W;
        for (int64_t oy = 0; oy < oh; ++oy) {
          double ty = ym->t[static_cast<size_t>(oy)];
          int64_t a = ym->i0[static_cast<size_t>(oy)], b2 = ym->i1[static_cast<size_t>(oy)];
          for (int64_t ox = 0; ox < ow; ++ox) {
            double tx = xm->t[static_cast<size_t>(ox)];
            int64_t c0 = xm->i0[static_cast<size_t>(ox)], c1 = xm->i1[static_cast<size_t>(ox)];
            double gv = static_cast<double>(g[oy * ow + ox]);
            d[a * W + c0] += static_cast<T>(gv * (1 - ty) * (1 - tx));
            d[a * W + c1] += static_cast<T>(gv * (1 - ty) * tx);
            d[b2 * W + c0] += static_cast<T>(gv * ty * (1 - tx));
            d[b2 * W + c1] += static_cast<T>(gv * ty * tx);
          }
        }
      }
      accumulate_grad(*xi, gxs);
    });
  };
  Tensor out = make_op("bilinear_resize", {B, C, oh, ow}, x.dtype(), {x}, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    parallel_for(B * C, [&](int64_t s, int64_t e) {
      for (int64_t bc = s; bc < e; ++bc) {
        const T* src = px + bc * H * W;
        T* dst = po + bc * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          double ty = ym->t[static_cast<size_t>(oy)];
          const T* r0 = src + ym->i0[static_cast<size_t>(oy)] * W;
          const T* r1 = src + ym->i1[static_cast<size_t>(oy)] * W;
          for (int64_t ox = 0; ox < ow; ++ox) {
            double tx = xm->t[static_cast<size_t>(ox)];
            int64_t c0 = xm->i0[static_cast<size_t>(ox)], c1 = xm->i1[static_cast<size_t>(ox)];
            dst[oy * ow + ox] = static_cast<T>((1 - ty) * ((1 - tx) * r0[c0] + tx * r0[c1]) +
                                               ty * ((1 - tx) * r1[c0] + tx * r1[c1]));
          }
        }
      }
    });
  });
  debug_check("bilinear_resize", out);
  return out;
}

Tensor drop_path(const Tensor& x, double rate, Rng& rng) {
  if (!train_mode() || rate <= 0.0) return x;
  int64_t B = x.dim(0);
  Shape mask_shape(static_cast<size_t>(x.ndim()), 1);
  mask_shape[0] = B;
  Tensor mask = Tensor::empty(mask_shape, x.dtype());
  double keep = 1.0 - rate;
  for (int64_t b = 0; b < B; ++b)
    mask.impl()->value.set(b, rng.uniform(0.0, 1.0) < keep ? 1.0 / keep : 0.0);
  return mul(x, mask);
}

Tensor expand_batch(const Tensor& t, int64_t batch) {
  Shape s = t.shape();
  Shape out_shape;
  out_shape.push_back(batch);
  for (int64_t d : s) out_shape.push_back(d);
  Shape ones(out_shape.size(), 1);
  ones[0] = batch;
  Tensor z = Tensor::zeros(ones, t.dtype());
  Shape view = out_shape;
  view[0] = 1;
  return add(reshape(t, view), z);
}

}  // namespace ps
