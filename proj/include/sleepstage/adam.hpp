#pragma once

// Bias-corrected Adam over a named parameter set. Parameters and moments are
// keyed by name in ordered maps so update order is deterministic.

#include <map>
#include <string>

#include "sleepstage/tensor.hpp"

namespace sleepstage {

using ParamMap = std::map<std::string, Tensor>;

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // params[name] -= update from grads[name]; missing grad entries are errors.
  void step(ParamMap& params, const ParamMap& grads);

  std::int64_t steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  ParamMap m_, v_;
};

}  // namespace sleepstage
