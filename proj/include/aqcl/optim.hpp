#pragma once

#include <vector>

#include "aqcl/ndcore.hpp"

namespace aqcl {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed list of tensors. Slot i of the moment
// state belongs to params[i] for the lifetime of the optimizer.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<nd::Tensor*>& params, const std::vector<nd::Tensor>& grads);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<nd::Tensor> m_, v_;
};

}  // namespace aqcl
