#pragma once

#include <utility>

#include "ps/tensor.hpp"

namespace ps {

// ----- shape ops (copying views; gradients flow through) -----
Tensor reshape(const Tensor& t, Shape shape);  // one -1 extent allowed
Tensor permute(const Tensor& t, const std::vector<int>& dims);
Tensor slice(const Tensor& t, int dim, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& ts, int dim);
std::vector<Tensor> split_channels(const Tensor& t, int dim, int64_t parts);

// ----- elementwise; binary ops broadcast right-aligned (trailing dims) -----
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ----- reductions -----
Tensor sum(const Tensor& t);
Tensor sum_axis(const Tensor& t, int axis, bool keepdim);
Tensor mean(const Tensor& t);

// ----- linear algebra -----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N]
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false,
           bool trans_b = false);                 // [B,M,K] x [B,K,N]
// x [..., in], w [out, in], optional b [out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

// softmax over the last axis
Tensor softmax(const Tensor& t);

// rows of `table` [R, C] selected by index -> [N, C]; backward scatter-adds
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& idx);

// ----- NN primitives -----
// x [B,Cin,H,W], w [Cout, Cin/groups, k, k], b [Cout] (optional)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding, int groups);
// fixed kernel 2, stride 2 doubler; w [Cin, Cout, 2, 2]
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b);
// half-pixel centers with edge clamp; scale in {2, 4}
Tensor bilinear_upsample(const Tensor& x, int scale);
// kernel 2 stride 2; ties route grad to the first element in window order
Tensor max_pool2d(const Tensor& x);
// normalizes along a single axis; gamma/beta shaped [extent(axis)]
Tensor layer_norm(const Tensor& x, int axis, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);
// x [B,C,H,W]; running stats are updated in place during training
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, bool training,
                    double momentum = 0.1, double eps = 1e-5);

// ----- losses -----
// logits [N, C], targets per row, per-class weights; weighted-mean reduction
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<double>& class_weights);
// mean over all elements of the numerically stable form
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// ----- multi-scale deformable sampling core -----
// value [B, S, D] with S = sum of h*w over levels; ref [B, Nq, L, 2] is a
// constant of normalized (x, y); offsets [B, Nq, H, L, P, 2] in normalized
// units; weights [B, Nq, H, L, P]. Head h samples only its D/H channel slice.
// Out-of-range locations clamp to the border.
Tensor ms_deform_sample(const Tensor& value,
                        const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                        const Tensor& ref, const Tensor& offsets,
                        const Tensor& weights);

}  // namespace ps
