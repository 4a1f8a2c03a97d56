#include "sleepstage/adam.hpp"

#include <cmath>

namespace sleepstage {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  check(lr > 0, ErrorKind::config, "adam: learning rate must be positive");
}

void Adam::step(ParamMap& params, const ParamMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    check(git != grads.end(), ErrorKind::internal, "adam: missing gradient for " + name);
    const Tensor& g = git->second;
    check(g.same_shape(theta), ErrorKind::internal, "adam: grad shape mismatch for " + name);
    Tensor& m = m_.try_emplace(name, Tensor(theta.shape)).first->second;
    Tensor& v = v_.try_emplace(name, Tensor(theta.shape)).first->second;
    for (std::size_t i = 0; i < theta.v.size(); ++i) {
      m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * g.v[i];
      v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * g.v[i] * g.v[i];
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      theta.v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace sleepstage
