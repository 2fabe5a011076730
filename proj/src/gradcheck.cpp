#include "ps/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ps {

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double eps) {
  Tape::get().clear();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor loss = f(x);
  PS_CHECK(loss.numel() == 1, "finite_difference_check: f must return a scalar");
  backward(loss);
  Tensor g = x.grad();
  PS_CHECK(g.defined(), "finite_difference_check: x received no gradient");
  std::vector<double> analytic = g.to_vector();
  Tape::get().clear();

  double max_err = 0.0;
  Storage& xs = x.impl()->value;
  NoGradGuard ng;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double v = xs.get(i);
    xs.set(i, v + eps);
    double up = f(x).item();
    xs.set(i, v - eps);
    double dn = f(x).item();
    xs.set(i, v);
    double numeric = (up - dn) / (2.0 * eps);
    double a = analytic[static_cast<size_t>(i)];
    double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_err = std::max(max_err, std::abs(a - numeric) / denom);
  }
  return max_err;
}

}  // namespace ps
