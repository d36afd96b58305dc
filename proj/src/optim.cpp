#include "aqcl/optim.hpp"

#include <cmath>

#include "aqcl/error.hpp"

namespace aqcl {

void Adam::step(const std::vector<nd::Tensor*>& params, const std::vector<nd::Tensor>& grads) {
  if (params.size() != grads.size()) fail(ErrorCode::Internal, "adam: params/grads size mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(nd::zeros_like(*p));
      v_.push_back(nd::zeros_like(*p));
    }
  }
  if (m_.size() != params.size()) fail(ErrorCode::Internal, "adam: parameter list changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->data;
    const auto& g = grads[k].data;
    auto& m = m_[k].data;
    auto& v = v_[k].data;
    if (g.size() != p.size()) fail(ErrorCode::Internal, "adam: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace aqcl
