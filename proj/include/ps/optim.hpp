#pragma once

#include "ps/module.hpp"

namespace ps {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm. Parameters without gradients are skipped.
double clip_grad_norm(const ParamList& params, double max_norm);

class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamList& params, AdamWConfig cfg);

  // lr_of(i) gives the learning rate for params[i] this step
  void step(const std::function<double(size_t)>& lr_of);
  void zero_grad();

  int64_t step_count() const { return t_; }
  const ParamList& params() const { return params_; }
  // optimizer state as named tensors for checkpointing
  ParamList state_tensors() const;
  void set_step_count(int64_t t) { t_ = t; }

 private:
  ParamList params_;  // trainable entries only
  std::vector<Tensor> m_, v_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace ps
