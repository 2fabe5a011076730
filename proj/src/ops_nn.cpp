#include <algorithm>
#include <cmath>
#include <cstring>

#include "ps/ops.hpp"

namespace ps {

namespace {

template <typename T>
void gemm_simple(bool ta, bool tb, int64_t M, int64_t N, int64_t K, const T* A,
                 const T* B, T* C, int64_t lda, int64_t ldb) {
  if (!ta && !tb) {
    for (int64_t i = 0; i < M; ++i) {
      T* c = C + i * N;
      std::memset(c, 0, static_cast<size_t>(N) * sizeof(T));
      const T* ar = A + i * lda;
      for (int64_t k = 0; k < K; ++k) {
        T a = ar[k];
        const T* br = B + k * ldb;
        for (int64_t j = 0; j < N; ++j) c[j] += a * br[j];
      }
    }
  } else if (!ta && tb) {
    for (int64_t i = 0; i < M; ++i) {
      const T* ar = A + i * lda;
      T* c = C + i * N;
      for (int64_t j = 0; j < N; ++j) {
        const T* br = B + j * ldb;
        T acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += ar[k] * br[k];
        c[j] = acc;
      }
    }
  } else if (ta && !tb) {
    for (int64_t i = 0; i < M; ++i) {
      T* c = C + i * N;
      std::memset(c, 0, static_cast<size_t>(N) * sizeof(T));
      for (int64_t k = 0; k < K; ++k) {
        T a = A[k * lda + i];
        const T* br = B + k * ldb;
        for (int64_t j = 0; j < N; ++j) c[j] += a * br[j];
      }
    }
  } else {
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < N; ++j) {
        T acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += A[k * lda + i] * B[j * ldb + k];
        C[i * N + j] = acc;
      }
  }
}

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
            int64_t pad, int64_t oh, int64_t ow, T* col) {
  // col layout: [(c, ki, kj), (oy, ox)]
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        T* dst = col + ((c * k + ki) * k + kj) * (oh * ow);
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) {
            std::memset(dst + oy * ow, 0, static_cast<size_t>(ow) * sizeof(T));
            continue;
          }
          const T* row = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * stride - pad + kj;
            dst[oy * ow + ox] = (ix >= 0 && ix < W) ? row[ix] : static_cast<T>(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
            int64_t pad, int64_t oh, int64_t ow, T* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        const T* src = col + ((c * k + ki) * k + kj) * (oh * ow);
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* row = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) row[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding, int groups) {
  PS_CHECK(x.ndim() == 4, "conv2d: input must be [B,C,H,W]");
  PS_CHECK(w.ndim() == 4, "conv2d: weight must be [Cout,Cin/G,k,k]");
  int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Cout = w.dim(0), Cing = w.dim(1), k = w.dim(2);
  PS_CHECK(w.dim(3) == k, "conv2d: kernel must be square");
  PS_CHECK(groups >= 1 && Cin % groups == 0 && Cout % groups == 0,
           "conv2d: channels not divisible by groups");
  PS_CHECK(Cing == Cin / groups,
           "conv2d: weight expects " << Cing * groups << " input channels, got " << Cin);
  int64_t oh = (H + 2 * padding - k) / stride + 1;
  int64_t ow = (W + 2 * padding - k) / stride + 1;
  PS_CHECK(oh > 0 && ow > 0, "conv2d: empty output");
  int64_t Coutg = Cout / groups;
  int64_t P = oh * ow;
  int64_t colrows = Cin * k * k;
  int64_t grows = Cing * k * k;

  auto xi = x.impl_ptr();
  auto wi = w.impl_ptr();
  TensorImplPtr bi = b.defined() ? b.impl_ptr() : nullptr;
  auto bw = [=](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      const T* px = xi->value.data<T>();
      const T* pw = wi->value.data<T>();
      bool need_x = xi->requires_grad, need_w = wi->requires_grad;
      Storage gxs(need_x ? xi->numel() : 0, self.value.dtype());
      Storage gws(need_w ? wi->numel() : 0, self.value.dtype());
      std::vector<T> col(static_cast<size_t>(colrows * P));
      std::vector<T> gcol(static_cast<size_t>(grows * P));
      for (int64_t bb = 0; bb < B; ++bb) {
        const T* gx_out = pg + bb * Cout * P;
        if (need_x || need_w)
          im2col(px + bb * Cin * H * W, Cin, H, W, k, stride, padding, oh, ow, col.data());
        for (int64_t g = 0; g < groups; ++g) {
          const T* gout_g = gx_out + g * Coutg * P;
          const T* col_g = col.data() + g * grows * P;
          if (need_w) {
            // accumulate dW += G * col^T
            T* gw = gws.data<T>() + g * Coutg * grows;
            for (int64_t i = 0; i < Coutg; ++i)
              for (int64_t j = 0; j < grows; ++j) {
                const T* gr = gout_g + i * P;
                const T* cr = col_g + j * P;
                T acc = 0;
                for (int64_t p = 0; p < P; ++p) acc += gr[p] * cr[p];
                gw[i * grows + j] += acc;
              }
          }
          if (need_x) {
            gemm_simple<T>(true, false, grows, P, Coutg,
                           pw + g * Coutg * grows, gout_g, gcol.data(), grows, P);
            col2im(gcol.data(), Cing, H, W, k, stride, padding, oh, ow,
                   gxs.data<T>() + (bb * Cin + g * Cing) * H * W);
          }
        }
      }
      if (need_x) accumulate_grad(*xi, gxs);
      if (need_w) accumulate_grad(*wi, gws);
      if (bi && bi->requires_grad) {
        Storage gbs(Cout, self.value.dtype());
        T* gb = gbs.data<T>();
        for (int64_t bb = 0; bb < B; ++bb)
          for (int64_t c = 0; c < Cout; ++c) {
            const T* g = pg + (bb * Cout + c) * P;
            T acc = 0;
            for (int64_t p = 0; p < P; ++p) acc += g[p];
            gb[c] += acc;
          }
        accumulate_grad(*bi, gbs);
      }
    });
  };

  std::vector<Tensor> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  Tensor out = make_op("conv2d", {B, Cout, oh, ow}, x.dtype(), inputs, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    const T* pw = w.data<T>();
    T* po = out.data<T>();
    parallel_for(B, [&](int64_t s, int64_t e) {
      std::vector<T> col(static_cast<size_t>(colrows * P));
      for (int64_t bb = s; bb < e; ++bb) {
        im2col(px + bb * Cin * H * W, Cin, H, W, k, stride, padding, oh, ow, col.data());
        for (int64_t g = 0; g < groups; ++g)
          gemm_simple<T>(false, false, Coutg, P, grows,
                         pw + g * Coutg * grows, col.data() + g * grows * P,
                         po + (bb * Cout + g * Coutg) * P, grows, P);
      }
    });
    if (b.defined()) {
      const T* pb = b.data<T>();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < Cout; ++c) {
          T* row = po + (bb * Cout + c) * P;
          T bias = pb[c];
          for (int64_t p = 0; p < P; ++p) row[p] += bias;
        }
    }
  });
  debug_check("conv2d", out);
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  PS_CHECK(x.ndim() == 4, "conv_transpose2d: input must be [B,C,H,W]");
  PS_CHECK(w.ndim() == 4 && w.dim(2) == 2 && w.dim(3) == 2,
           "conv_transpose2d: weight must be [Cin,Cout,2,2]");
  int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  PS_CHECK(w.dim(0) == Cin, "conv_transpose2d: channel mismatch");
  int64_t Cout = w.dim(1);
  int64_t P = H * W;
  int64_t Mb = Cout * 4;  // (co, di, dj) block rows

  auto xi = x.impl_ptr();
  auto wi = w.impl_ptr();
  TensorImplPtr bi = b.defined() ? b.impl_ptr() : nullptr;

  // gather/scatter between block layout [(co,di,dj), (i,j)] and output image
  auto scatter = [=](const auto* blk, auto* img) {
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t di = 0; di < 2; ++di)
        for (int64_t dj = 0; dj < 2; ++dj) {
          const auto* src = blk + ((co * 2 + di) * 2 + dj) * P;
          for (int64_t i = 0; i < H; ++i) {
            auto* dst = img + (co * 2 * H + 2 * i + di) * 2 * W + dj;
            for (int64_t j = 0; j < W; ++j) dst[2 * j] = src[i * W + j];
          }
        }
  };
  auto gather = [=](const auto* img, auto* blk) {
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t di = 0; di < 2; ++di)
        for (int64_t dj = 0; dj < 2; ++dj) {
          auto* dst = blk + ((co * 2 + di) * 2 + dj) * P;
          for (int64_t i = 0; i < H; ++i) {
            const auto* src = img + (co * 2 * H + 2 * i + di) * 2 * W + dj;
            for (int64_t j = 0; j < W; ++j) dst[i * W + j] = src[2 * j];
          }
        }
  };

  auto bw = [=](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      const T* px = xi->value.data<T>();
      const T* pw = wi->value.data<T>();
      bool need_x = xi->requires_grad, need_w = wi->requires_grad;
      Storage gxs(need_x ? xi->numel() : 0, self.value.dtype());
      Storage gws(need_w ? wi->numel() : 0, self.value.dtype());
      std::vector<T> gblk(static_cast<size_t>(Mb * P));
      for (int64_t bb = 0; bb < B; ++bb) {
        gather(pg + bb * Cout * 4 * P, gblk.data());
        if (need_x)  // dX = W_resh [Cin, Mb] * gblk
          gemm_simple<T>(false, false, Cin, P, Mb, pw, gblk.data(),
                         gxs.data<T>() + bb * Cin * P, Mb, P);
        if (need_w) {  // dW += x_flat * gblk^T
          T* gw = gws.data<T>();
          const T* xb = px + bb * Cin * P;
          for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t m = 0; m < Mb; ++m) {
              const T* xr = xb + ci * P;
              const T* gr = gblk.data() + m * P;
              T acc = 0;
              for (int64_t p = 0; p < P; ++p) acc += xr[p] * gr[p];
              gw[ci * Mb + m] += acc;
            }
        }
      }
      if (need_x) accumulate_grad(*xi, gxs);
      if (need_w) accumulate_grad(*wi, gws);
      if (bi && bi->requires_grad) {
        Storage gbs(Cout, self.value.dtype());
        T* gb = gbs.data<T>();
        int64_t op = 4 * P;
        for (int64_t bb = 0; bb < B; ++bb)
          for (int64_t c = 0; c < Cout; ++c) {
            const T* g = pg + (bb * Cout + c) * op;
            T acc = 0;
            for (int64_t p = 0; p < op; ++p) acc += g[p];
            gb[c] += acc;
          }
        accumulate_grad(*bi, gbs);
      }
    });
  };

  std::vector<Tensor> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  Tensor out = make_op("conv_transpose2d", {B, Cout, 2 * H, 2 * W}, x.dtype(), inputs, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    const T* pw = w.data<T>();
    T* po = out.data<T>();
    parallel_for(B, [&](int64_t s, int64_t e) {
      std::vector<T> blk(static_cast<size_t>(Mb * P));
      for (int64_t bb = s; bb < e; ++bb) {
        gemm_simple<T>(true, false, Mb, P, Cin, pw, px + bb * Cin * P, blk.data(), Mb, P);
        scatter(blk.data(), po + bb * Cout * 4 * P);
      }
    });
    if (b.defined()) {
      const T* pb = b.data<T>();
      int64_t op = 4 * P;
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < Cout; ++c) {
          T* row = po + (bb * Cout + c) * op;
          T bias = pb[c];
          for (int64_t p = 0; p < op; ++p) row[p] += bias;
        }
    }
  });
  debug_check("conv_transpose2d", out);
  return out;
}

Tensor bilinear_upsample(const Tensor& x, int scale) {
  PS_CHECK(x.ndim() == 4, "bilinear_upsample: input must be [B,C,H,W]");
  PS_CHECK(scale == 2 || scale == 4, "bilinear_upsample: scale must be 2 or 4, got " << scale);
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OH = H * scale, OW = W * scale;

  // half-pixel centers with edge clamp: src = (dst + 0.5)/scale - 0.5
  auto make_maps = [scale](int64_t in, int64_t on, std::vector<int64_t>& i0,
                           std::vector<int64_t>& i1, std::vector<double>& wt) {
    i0.resize(static_cast<size_t>(on));
    i1.resize(static_cast<size_t>(on));
    wt.resize(static_cast<size_t>(on));
    for (int64_t o = 0; o < on; ++o) {
      double src = (static_cast<double>(o) + 0.5) / scale - 0.5;
      double f = std::floor(src);
      double t = src - f;
      int64_t a = static_cast<int64_t>(f);
      i0[static_cast<size_t>(o)] = std::clamp<int64_t>(a, 0, in - 1);
      i1[static_cast<size_t>(o)] = std::clamp<int64_t>(a + 1, 0, in - 1);
      wt[static_cast<size_t>(o)] = t;
    }
  };
  std::vector<int64_t> y0, y1, x0, x1;
  std::vector<double> wy, wx;
  make_maps(H, OH, y0, y1, wy);
  make_maps(W, OW, x0, x1, wx);

  auto xi = x.impl_ptr();
  auto bw = [=](TensorImpl& self) {
    if (!xi->requires_grad) return;
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      Storage gxs(xi->numel(), self.value.dtype());
      T* gx = gxs.data<T>();
      parallel_for(B * C, [&](int64_t s, int64_t e) {
        for (int64_t bc = s; bc < e; ++bc) {
          const T* g = pg + bc * OH * OW;
          T* d = gx + bc * H * W;
          for (int64_t oy = 0; oy < OH; ++oy) {
            double ty = wy[static_cast<size_t>(oy)];
            int64_t a = y0[static_cast<size_t>(oy)], b2 = y1[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < OW; ++ox) {
              double tx = wx[static_cast<size_t>(ox)];
              int64_t c0 = x0[static_cast<size_t>(ox)], c1 = x1[static_cast<size_t>(ox)];
              double gv = static_cast<double>(g[oy * OW + ox]);
              d[a * W + c0] += static_cast<T>(gv * (1 - ty) * (1 - tx));
              d[a * W + c1] += static_cast<T>(gv * (1 - ty) * tx);
              d[b2 * W + c0] += static_cast<T>(gv * ty * (1 - tx));
              d[b2 * W + c1] += static_cast<T>(gv * ty * tx);
            }
          }
        }
      });
      accumulate_grad(*xi, gxs);
    });
  };

  Tensor out = make_op("bilinear_upsample", {B, C, OH, OW}, x.dtype(), {x}, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    parallel_for(B * C, [&](int64_t s, int64_t e) {
      for (int64_t bc = s; bc < e; ++bc) {
        const T* src = px + bc * H * W;
        T* dst = po + bc * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          double ty = wy[static_cast<size_t>(oy)];
          const T* r0 = src + y0[static_cast<size_t>(oy)] * W;
          const T* r1 = src + y1[static_cast<size_t>(oy)] * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            double tx = wx[static_cast<size_t>(ox)];
            int64_t c0 = x0[static_cast<size_t>(ox)], c1 = x1[static_cast<size_t>(ox)];
            double v = (1 - ty) * ((1 - tx) * r0[c0] + tx * r0[c1]) +
                       ty * ((1 - tx) * r1[c0] + tx * r1[c1]);
            dst[oy * OW + ox] = static_cast<T>(v);
          }
        }
      }
    });
  });
  debug_check("bilinear_upsample", out);
  return out;
}

Tensor max_pool2d(const Tensor& x) {
  PS_CHECK(x.ndim() == 4, "max_pool2d: input must be [B,C,H,W]");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  PS_CHECK(H % 2 == 0 && W % 2 == 0, "max_pool2d: odd spatial dims " << H << "x" << W);
  int64_t OH = H / 2, OW = W / 2;
  auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(B * C * OH * OW));

  auto xi = x.impl_ptr();
  auto bw = [=](TensorImpl& self) {
    if (!xi->requires_grad) return;
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      Storage gxs(xi->numel(), self.value.dtype());
      T* gx = gxs.data<T>();
      int64_t n = B * C * OH * OW;
      for (int64_t i = 0; i < n; ++i) gx[(*argmax)[static_cast<size_t>(i)]] += pg[i];
      accumulate_grad(*xi, gxs);
    });
  };

  Tensor out = make_op("max_pool2d", {B, C, OH, OW}, x.dtype(), {x}, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const T* src = px + bc * H * W;
      T* dst = po + bc * OH * OW;
      int32_t* am = argmax->data() + bc * OH * OW;
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          int64_t best = 2 * oy * W + 2 * ox;
          T bv = src[best];
          // row-major window scan; strict > keeps the first max on ties
          for (int d = 1; d < 4; ++d) {
            int64_t idx = (2 * oy + d / 2) * W + 2 * ox + d % 2;
            if (src[idx] > bv) {
              bv = src[idx];
              best = idx;
            }
          }
          dst[oy * OW + ox] = bv;
          am[oy * OW + ox] = static_cast<int32_t>(bc * H * W + best);
        }
    }
  });
  debug_check("max_pool2d", out);
  return out;
}

Tensor layer_norm(const Tensor& x, int axis, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (axis < 0) axis += x.ndim();
  PS_CHECK(axis >= 0 && axis < x.ndim(), "layer_norm: bad axis");
  int64_t C = x.shape()[static_cast<size_t>(axis)];
  PS_CHECK(gamma.numel() == C && beta.numel() == C,
           "layer_norm: gamma/beta must have " << C << " elements");
  int64_t inner = 1;
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.shape()[static_cast<size_t>(i)];
  int64_t outer = x.numel() / (C * inner);
  int64_t rows = outer * inner;

  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * 2));
  auto xi = x.impl_ptr();
  auto gi = gamma.impl_ptr();
  auto bi = beta.impl_ptr();

  auto bw = [=](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      const T* px = xi->value.data<T>();
      const T* pgam = gi->value.data<T>();
      bool need_x = xi->requires_grad;
      Storage gxs(need_x ? xi->numel() : 0, self.value.dtype());
      Storage ggs(gi->requires_grad ? C : 0, self.value.dtype());
      Storage gbs(bi->requires_grad ? C : 0, self.value.dtype());
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          int64_t row = o * inner + in;
          double m = (*stats)[static_cast<size_t>(2 * row)];
          double rstd = (*stats)[static_cast<size_t>(2 * row + 1)];
          int64_t base = (o * C) * inner + in;
          double sum1 = 0.0, sum2 = 0.0;
          for (int64_t c = 0; c < C; ++c) {
            int64_t idx = base + c * inner;
            double xh = (static_cast<double>(px[idx]) - m) * rstd;
            double gy = static_cast<double>(pg[idx]) * static_cast<double>(pgam[c]);
            sum1 += gy;
            sum2 += gy * xh;
            if (gi->requires_grad)
              ggs.set(c, ggs.get(c) + static_cast<double>(pg[idx]) * xh);
            if (bi->requires_grad) gbs.set(c, gbs.get(c) + static_cast<double>(pg[idx]));
          }
          if (need_x) {
            T* gx = gxs.data<T>();
            double invC = 1.0 / static_cast<double>(C);
            for (int64_t c = 0; c < C; ++c) {
              int64_t idx = base + c * inner;
              double xh = (static_cast<double>(px[idx]) - m) * rstd;
              double gy = static_cast<double>(pg[idx]) * static_cast<double>(pgam[c]);
              gx[idx] = static_cast<T>(rstd * (gy - sum1 * invC - xh * sum2 * invC));
            }
          }
        }
      }
      if (need_x) accumulate_grad(*xi, gxs);
      if (gi->requires_grad) accumulate_grad(*gi, ggs);
      if (bi->requires_grad) accumulate_grad(*bi, gbs);
    });
  };

  Tensor out = make_op("layer_norm", x.shape(), x.dtype(), {x, gamma, beta}, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    const T* pgam = gamma.data<T>();
    const T* pbet = beta.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        int64_t base = (o * C) * inner + in;
        double m = 0.0;
        for (int64_t c = 0; c < C; ++c) m += static_cast<double>(px[base + c * inner]);
        m /= static_cast<double>(C);
        double v = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          double d = static_cast<double>(px[base + c * inner]) - m;
          v += d * d;
        }
        v /= static_cast<double>(C);
        double rstd = 1.0 / std::sqrt(v + eps);
        int64_t row = o * inner + in;
        (*stats)[static_cast<size_t>(2 * row)] = m;
        (*stats)[static_cast<size_t>(2 * row + 1)] = rstd;
        for (int64_t c = 0; c < C; ++c) {
          int64_t idx = base + c * inner;
          double xh = (static_cast<double>(px[idx]) - m) * rstd;
          po[idx] = static_cast<T>(xh * static_cast<double>(pgam[c]) +
                                   static_cast<double>(pbet[c]));
        }
      }
    }
  });
  debug_check("layer_norm", out);
  return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, bool training,
                    double momentum, double eps) {
  PS_CHECK(x.ndim() == 4, "batch_norm2d: input must be [B,C,H,W]");
  int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  PS_CHECK(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
               running_var.numel() == C,
           "batch_norm2d: per-channel parameter size mismatch");
  int64_t n = B * HW;

  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(C * 2));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (int64_t bb = 0; bb < B; ++bb) {
        int64_t base = (bb * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) m += x.impl()->value.get(base + i);
      }
      m /= static_cast<double>(n);
      double v = 0.0;
      for (int64_t bb = 0; bb < B; ++bb) {
        int64_t base = (bb * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          double d = x.impl()->value.get(base + i) - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(n);
      (*stats)[static_cast<size_t>(2 * c)] = m;
      (*stats)[static_cast<size_t>(2 * c + 1)] = v;
      double unbiased = n > 1 ? v * static_cast<double>(n) / static_cast<double>(n - 1) : v;
      running_mean.impl()->value.set(
          c, (1.0 - momentum) * running_mean.impl()->value.get(c) + momentum * m);
      running_var.impl()->value.set(
          c, (1.0 - momentum) * running_var.impl()->value.get(c) + momentum * unbiased);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      (*stats)[static_cast<size_t>(2 * c)] = running_mean.impl()->value.get(c);
      (*stats)[static_cast<size_t>(2 * c + 1)] = running_var.impl()->value.get(c);
    }
  }

  auto xi = x.impl_ptr();
  auto gi = gamma.impl_ptr();
  auto bi = beta.impl_ptr();
  auto bw = [=](TensorImpl& self) {
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = self.grad->data<T>();
      const T* px = xi->value.data<T>();
      const T* pgam = gi->value.data<T>();
      bool need_x = xi->requires_grad;
      Storage gxs(need_x ? xi->numel() : 0, self.value.dtype());
      Storage ggs(gi->requires_grad ? C : 0, self.value.dtype());
      Storage gbs(bi->requires_grad ? C : 0, self.value.dtype());
      for (int64_t c = 0; c < C; ++c) {
        double m = (*stats)[static_cast<size_t>(2 * c)];
        double rstd = 1.0 / std::sqrt((*stats)[static_cast<size_t>(2 * c + 1)] + eps);
        double sg = 0.0, sgx = 0.0;
        for (int64_t bb = 0; bb < B; ++bb) {
          int64_t base = (bb * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) {
            double g = static_cast<double>(pg[base + i]);
            double xh = (static_cast<double>(px[base + i]) - m) * rstd;
            sg += g;
            sgx += g * xh;
          }
        }
        if (gi->requires_grad) ggs.set(c, sgx);
        if (bi->requires_grad) gbs.set(c, sg);
        if (need_x) {
          T* gx = gxs.data<T>();
          double gam = static_cast<double>(pgam[c]);
          double invn = 1.0 / static_cast<double>(n);
          for (int64_t bb = 0; bb < B; ++bb) {
            int64_t base = (bb * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              double g = static_cast<double>(pg[base + i]);
              double xh = (static_cast<double>(px[base + i]) - m) * rstd;
              double d = training ? (g - sg * invn - xh * sgx * invn) : g;
              gx[base + i] = static_cast<T>(gam * rstd * d);
            }
          }
        }
      }
      if (need_x) accumulate_grad(*xi, gxs);
      if (gi->requires_grad) accumulate_grad(*gi, ggs);
      if (bi->requires_grad) accumulate_grad(*bi, gbs);
    });
  };

  Tensor out = make_op("batch_norm2d", x.shape(), x.dtype(), {x, gamma, beta}, bw);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    const T* pgam = gamma.data<T>();
    const T* pbet = beta.data<T>();
    T* po = out.data<T>();
    for (int64_t c = 0; c < C; ++c) {
      double m = (*stats)[static_cast<size_t>(2 * c)];
      double rstd = 1.0 / std::sqrt((*stats)[static_cast<size_t>(2 * c + 1)] + eps);
      double gam = static_cast<double>(pgam[c]), bet = static_cast<double>(pbet[c]);
      for (int64_t bb = 0; bb < B; ++bb) {
        int64_t base = (bb * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i)
          po[base + i] = static_cast<T>((static_cast<double>(px[base + i]) - m) * rstd * gam + bet);
      }
    }
  });
  debug_check("batch_norm2d", out);
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<double>& class_weights) {
  PS_CHECK(logits.ndim() == 2, "cross_entropy: logits must be [N,C]");
  int64_t N = logits.dim(0), C = logits.dim(1);
  PS_CHECK(static_cast<int64_t>(targets.size()) == N, "cross_entropy: target count mismatch");
  PS_CHECK(static_cast<int64_t>(class_weights.size()) == C,
           "cross_entropy: class weight count mismatch");
  for (int64_t t : targets) PS_CHECK(t >= 0 && t < C, "cross_entropy: target out of range");

  double wsum = 0.0;
  for (int64_t i = 0; i < N; ++i) wsum += class_weights[static_cast<size_t>(targets[static_cast<size_t>(i)])];
  if (wsum <= 0.0) wsum = 1.0;

  auto li = logits.impl_ptr();
  auto tcopy = targets;
  auto wcopy = class_weights;
  auto bw = [li, tcopy, wcopy, N, C, wsum](TensorImpl& self) {
    if (!li->requires_grad) return;
    double g = self.grad->get(0);
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = li->value.data<T>();
      Storage gxs(li->numel(), self.value.dtype());
      T* gx = gxs.data<T>();
      for (int64_t i = 0; i < N; ++i) {
        const T* row = px + i * C;
        double mx = static_cast<double>(row[0]);
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
        int64_t t = tcopy[static_cast<size_t>(i)];
        double w = wcopy[static_cast<size_t>(t)] / wsum;
        for (int64_t c = 0; c < C; ++c) {
          double p = std::exp(static_cast<double>(row[c]) - mx) / sum;
          gx[i * C + c] = static_cast<T>(g * w * (p - (c == t ? 1.0 : 0.0)));
        }
      }
      accumulate_grad(*li, gxs);
    });
  };
  Tensor out = make_op("cross_entropy", {1}, logits.dtype(), {logits}, bw);
  dispatch_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = logits.data<T>();
    long double loss = 0.0;
    for (int64_t i = 0; i < N; ++i) {
      const T* row = px + i * C;
      double mx = static_cast<double>(row[0]);
      for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
      double sum = 0.0;
      for (int64_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
      int64_t t = targets[static_cast<size_t>(i)];
      double lse = mx + std::log(sum);
      loss += class_weights[static_cast<size_t>(t)] * (lse - static_cast<double>(row[t]));
    }
    out.impl()->value.set(0, static_cast<double>(loss / wsum));
  });
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  PS_CHECK(logits.shape() == targets.shape(), "bce_with_logits: shape mismatch");
  int64_t n = logits.numel();
  auto li = logits.impl_ptr();
  auto ti = targets.impl_ptr();
  auto bw = [li, ti, n](TensorImpl& self) {
    if (!li->requires_grad) return;
    double g = self.grad->get(0) / static_cast<double>(n);
    dispatch_dtype(self.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = li->value.data<T>();
      const T* py = ti->value.data<T>();
      Storage gxs(n, self.value.dtype());
      T* gx = gxs.data<T>();
      for (int64_t i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-static_cast<double>(px[i])));
        gx[i] = static_cast<T>(g * (s - static_cast<double>(py[i])));
      }
      accumulate_grad(*li, gxs);
    });
  };
  Tensor out = make_op("bce_with_logits", {1}, logits.dtype(), {logits, targets}, bw);
  dispatch_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = logits.data<T>();
    const T* py = targets.data<T>();
    long double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double x = static_cast<double>(px[i]);
      double y = static_cast<double>(py[i]);
      loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    out.impl()->value.set(0, static_cast<double>(loss / static_cast<long double>(n)));
  });
  return out;
}

Tensor ms_deform_sample(const Tensor& value,
                        const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                        const Tensor& ref, const Tensor& offsets, const Tensor& weights) {
  PS_CHECK(value.ndim() == 3, "ms_deform_sample: value must be [B,S,D]");
  PS_CHECK(offsets.ndim() == 6 && weights.ndim() == 5, "ms_deform_sample: bad aux ranks");
  int64_t B = value.dim(0), S = value.dim(1), D = value.dim(2);
  int64_t Nq = offsets.dim(1), Hh = offsets.dim(2), L = offsets.dim(3), P = offsets.dim(4);
  PS_CHECK(offsets.dim(0) == B && offsets.dim(5) == 2, "ms_deform_sample: offsets shape");
  PS_CHECK(weights.dim(0) == B && weights.dim(1) == Nq && weights.dim(2) == Hh &&
               weights.dim(3) == L && weights.dim(4) == P,
           "ms_deform_sample: weights shape");
  PS_CHECK(ref.ndim() == 4 && ref.dim(0) == B && ref.dim(1) == Nq && ref.dim(2) == L &&
               ref.dim(3) == 2,
           "ms_deform_sample: ref shape");
  PS_CHECK(static_cast<int64_t>(level_shapes.size()) == L, "ms_deform_sample: level count");
  PS_CHECK(D % Hh == 0, "ms_deform_sample: D must divide into heads");
  int64_t total = 0;
  std::vector<int64_t> lvl_off(level_shapes.size());
  for (size_t l = 0; l < level_shapes.size(); ++l) {
    lvl_off[l] = total;
    total += level_shapes[l].first * level_shapes[l].second;
  }
  PS_CHECK(total == S, "ms_deform_sample: level shapes sum " << total << " != S " << S);
  int64_t dh = D / Hh;

  auto vi = value.impl_ptr();
  auto ri = ref.impl_ptr();
  auto oi = offsets.impl_ptr();
  auto wi = weights.impl_ptr();
  auto shapes = level_shapes;

  // shared sampling walk used by forward and backward
  auto for_each_sample = [=](const Storage& vs, const Storage& rs, const Storage& os,
                             const Storage& ws, auto&& fn) {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t q = 0; q < Nq; ++q)
        for (int64_t h = 0; h < Hh; ++h)
          for (int64_t l = 0; l < L; ++l) {
            int64_t hl = shapes[static_cast<size_t>(l)].first;
            int64_t wl = shapes[static_cast<size_t>(l)].second;
            double rx = rs.get(((b * Nq + q) * L + l) * 2 + 0);
            double ry = rs.get(((b * Nq + q) * L + l) * 2 + 1);
            for (int64_t p = 0; p < P; ++p) {
              int64_t oidx = ((((b * Nq + q) * Hh + h) * L + l) * P + p) * 2;
              int64_t widx = (((b * Nq + q) * Hh + h) * L + l) * P + p;
              double lx = rx + os.get(oidx + 0);
              double ly = ry + os.get(oidx + 1);
              double pxf = lx * static_cast<double>(wl) - 0.5;
              double pyf = ly * static_cast<double>(hl) - 0.5;
              double fx = std::floor(pxf), fy = std::floor(pyf);
              double tx = pxf - fx, ty = pyf - fy;
              int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(fx), 0, wl - 1);
              int64_t x1 = std::clamp<int64_t>(static_cast<int64_t>(fx) + 1, 0, wl - 1);
              int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(fy), 0, hl - 1);
              int64_t y1 = std::clamp<int64_t>(static_cast<int64_t>(fy) + 1, 0, hl - 1);
              int64_t i00 = (b * S + lvl_off[static_cast<size_t>(l)] + y0 * wl + x0) * D + h * dh;
              int64_t i01 = (b * S + lvl_off[static_cast<size_t>(l)] + y0 * wl + x1) * D + h * dh;
              int64_t i10 = (b * S + lvl_off[static_cast<size_t>(l)] + y1 * wl + x0) * D + h * dh;
              int64_t i11 = (b * S + lvl_off[static_cast<size_t>(l)] + y1 * wl + x1) * D + h * dh;
              fn(b, q, h, widx, oidx, ws.get(widx), i00, i01, i10, i11, tx, ty,
                 static_cast<double>(wl), static_cast<double>(hl));
            }
          }
  };

  auto bw = [=](TensorImpl& self) {
    const Storage& g = *self.grad;
    bool need_v = vi->requires_grad, need_o = oi->requires_grad, need_w = wi->requires_grad;
    Storage gv(need_v ? vi->numel() : 0, self.value.dtype());
    Storage go(need_o ? oi->numel() : 0, self.value.dtype());
    Storage gw(need_w ? wi->numel() : 0, self.value.dtype());
    for_each_sample(vi->value, ri->value, oi->value, wi->value,
                    [&](int64_t b, int64_t q, int64_t h, int64_t widx, int64_t oidx,
                        double wgt, int64_t i00, int64_t i01, int64_t i10, int64_t i11,
                        double tx, double ty, double wl, double hl) {
                      int64_t gbase = (b * Nq + q) * D + h * dh;
                      double w00 = (1 - ty) * (1 - tx), w01 = (1 - ty) * tx;
                      double w10 = ty * (1 - tx), w11 = ty * tx;
                      double acc_w = 0.0, acc_dx = 0.0, acc_dy = 0.0;
                      for (int64_t d = 0; d < dh; ++d) {
                        double gd = g.get(gbase + d);
                        double v00 = vi->value.get(i00 + d), v01 = vi->value.get(i01 + d);
                        double v10 = vi->value.get(i10 + d), v11 = vi->value.get(i11 + d);
                        double sample = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11;
                        acc_w += gd * sample;
                        double dsdx = (1 - ty) * (v01 - v00) + ty * (v11 - v10);
                        double dsdy = (1 - tx) * (v10 - v00) + tx * (v11 - v01);
                        acc_dx += gd * dsdx;
                        acc_dy += gd * dsdy;
                        if (need_v) {
                          gv.set(i00 + d, gv.get(i00 + d) + wgt * w00 * gd);
                          gv.set(i01 + d, gv.get(i01 + d) + wgt * w01 * gd);
                          gv.set(i10 + d, gv.get(i10 + d) + wgt * w10 * gd);
                          gv.set(i11 + d, gv.get(i11 + d) + wgt * w11 * gd);
                        }
                      }
                      if (need_w) gw.set(widx, gw.get(widx) + acc_w);
                      if (need_o) {
                        go.set(oidx + 0, go.get(oidx + 0) + wgt * acc_dx * wl);
                        go.set(oidx + 1, go.get(oidx + 1) + wgt * acc_dy * hl);
                      }
                    });
    if (need_v) accumulate_grad(*vi, gv);
    if (need_o) accumulate_grad(*oi, go);
    if (need_w) accumulate_grad(*wi, gw);
  };

  Tensor out = make_op("ms_deform_sample", {B, Nq, D}, value.dtype(),
                       {value, ref, offsets, weights}, bw);
  Storage& ov = out.impl()->value;
  for_each_sample(value.impl()->value, ref.impl()->value, offsets.impl()->value,
                  weights.impl()->value,
                  [&](int64_t b, int64_t q, int64_t h, int64_t, int64_t, double wgt,
                      int64_t i00, int64_t i01, int64_t i10, int64_t i11, double tx,
                      double ty, double, double) {
                    int64_t gbase = (b * Nq + q) * D + h * dh;
                    double w00 = (1 - ty) * (1 - tx), w01 = (1 - ty) * tx;
                    double w10 = ty * (1 - tx), w11 = ty * tx;
                    const Storage& vs = value.impl()->value;
                    for (int64_t d = 0; d < dh; ++d) {
                      double s = w00 * vs.get(i00 + d) + w01 * vs.get(i01 + d) +
                                 w10 * vs.get(i10 + d) + w11 * vs.get(i11 + d);
                      ov.set(gbase + d, ov.get(gbase + d) + wgt * s);
                    }
                  });
  debug_check("ms_deform_sample", out);
  return out;
}

}  // namespace ps
