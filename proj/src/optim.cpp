#include "ps/optim.hpp"

#include <cmath>

namespace ps {

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const NamedParam& p : params) {
    TensorImpl* impl = p.tensor.impl();
    if (!impl->grad) continue;
    for (int64_t i = 0; i < impl->numel(); ++i) {
      double g = impl->grad->get(i);
      sq += g * g;
    }
  }
  double norm = std::sqrt(sq);
  double coef = max_norm / (norm + 1e-6);
  if (coef < 1.0) {
    for (const NamedParam& p : params) {
      TensorImpl* impl = p.tensor.impl();
      if (!impl->grad) continue;
      for (int64_t i = 0; i < impl->numel(); ++i)
        impl->grad->set(i, impl->grad->get(i) * coef);
    }
  }
  return norm;
}

AdamW::AdamW(const ParamList& params, AdamWConfig cfg) : cfg_(cfg) {
  for (const NamedParam& p : params)
    if (p.trainable) params_.push_back(p);
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const NamedParam& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
  }
}

void AdamW::step(const std::function<double(size_t)>& lr_of) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    NamedParam& p = params_[i];
    TensorImpl* impl = p.tensor.impl();
    if (!impl->grad) continue;
    double lr = lr_of(i);
    double wd = p.decay_exempt ? 0.0 : cfg_.weight_decay;
    Storage& ms = m_[i].impl()->value;
    Storage& vs = v_[i].impl()->value;
    for (int64_t k = 0; k < impl->numel(); ++k) {
      double g = impl->grad->get(k);
      double m = cfg_.beta1 * ms.get(k) + (1.0 - cfg_.beta1) * g;
      double v = cfg_.beta2 * vs.get(k) + (1.0 - cfg_.beta2) * g * g;
      ms.set(k, m);
      vs.set(k, v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      double x = impl->value.get(k);
      x -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * x);
      impl->value.set(k, x);
    }
  }
}

void AdamW::zero_grad() {
  for (NamedParam& p : params_) p.tensor.zero_grad();
}

ParamList AdamW::state_tensors() const {
  ParamList out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"opt.m." + params_[i].name, m_[i], false, true});
    out.push_back({"opt.v." + params_[i].name, v_[i], false, true});
  }
  return out;
}

}  // namespace ps
