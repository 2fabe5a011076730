#pragma once

#include <optional>
#include <string>

#include "ps/ops.hpp"

namespace ps {

// Train/eval mode switch consulted by batch norm and stochastic depth.
bool train_mode();
void set_train_mode(bool on);

struct EvalGuard {
  EvalGuard() : prev_(train_mode()) { set_train_mode(false); }
  ~EvalGuard() { set_train_mode(prev_); }
  bool prev_;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool trainable = true;      // false = buffer (e.g. BN running stats)
  bool decay_exempt = false;  // biases / norms / embeddings skip weight decay
};
using ParamList = std::vector<NamedParam>;

namespace init {
Tensor normal(Shape shape, Rng& rng, double stddev);
Tensor uniform(Shape shape, Rng& rng, double bound);
// fan-based uniform bound 1/sqrt(fan_in), the common linear/conv default
Tensor lecun_uniform(Shape shape, Rng& rng, int64_t fan_in);
Tensor xavier_uniform(Shape shape, Rng& rng, int64_t fan_in, int64_t fan_out);
}  // namespace init

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined
  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng, bool has_bias = true);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void params(const std::string& prefix, ParamList& out) const;
  int64_t in_features() const { return weight.dim(1); }
  int64_t out_features() const { return weight.dim(0); }
};

struct Conv2d {
  Tensor weight;  // [Cout, Cin/G, k, k]
  Tensor bias;
  int stride = 1, padding = 0, groups = 1;
  Conv2d() = default;
  Conv2d(int64_t cin, int64_t cout, int k, int stride, int padding, int groups,
         Rng& rng, bool has_bias = true);
  Tensor forward(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, padding, groups);
  }
  void params(const std::string& prefix, ParamList& out) const;
};

struct ConvTranspose2x2 {
  Tensor weight;  // [Cin, Cout, 2, 2]
  Tensor bias;
  ConvTranspose2x2() = default;
  ConvTranspose2x2(int64_t cin, int64_t cout, Rng& rng, bool has_bias = true);
  Tensor forward(const Tensor& x) const { return conv_transpose2d(x, weight, bias); }
  void params(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gamma, beta;
  int axis = -1;
  double eps = 1e-5;
  LayerNorm() = default;
  LayerNorm(int64_t dim, int axis);
  Tensor forward(const Tensor& x) const { return layer_norm(x, axis, gamma, beta, eps); }
  void params(const std::string& prefix, ParamList& out) const;
};

struct BatchNorm2d {
  Tensor gamma, beta, running_mean, running_var;
  double eps = 1e-5, momentum = 0.1;
  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels);
  Tensor forward(const Tensor& x) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, train_mode(),
                        momentum, eps);
  }
  void params(const std::string& prefix, ParamList& out) const;
};

// Additive attention masks: 0 keeps a key, kMaskedValue removes it.
constexpr double kMaskedValue = -1e4;

struct MultiheadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  int64_t num_heads = 1;
  MultiheadAttention() = default;
  MultiheadAttention(int64_t embed_dim, int64_t heads, Rng& rng);
  // q [B,Nq,D], k/v [B,Nk,D]; attn_mask additive [B,Nq,Nk] (optional);
  // rel_bias [heads,Nq,Nk] added to scores (optional). Rows of attn_mask that
  // would mask every key are reset to fully unmasked before use.
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& attn_mask = Tensor(),
                 const Tensor& rel_bias = Tensor()) const;
  void params(const std::string& prefix, ParamList& out) const;
};

// General bilinear resize (half-pixel centers, edge clamp), any target size.
Tensor bilinear_resize(const Tensor& x, int64_t oh, int64_t ow);

// Stochastic depth over the leading (batch) axis; identity in eval mode.
Tensor drop_path(const Tensor& x, double rate, Rng& rng);

// Broadcasts t [d0,d1,...] to [batch,d0,d1,...] with gradient flow.
Tensor expand_batch(const Tensor& t, int64_t batch);

}  // namespace ps
