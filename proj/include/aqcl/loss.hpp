#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "aqcl/ndcore.hpp"

namespace aqcl {

using nd::Tensor;
using nd::Var;

struct LossConfig {
  double tau1 = 0.1;     // instance temperature
  double tau2 = 0.1;     // cluster temperature
  double icl_tau = 0.1;  // temperature of the standalone instance loss
  double aux_weight = 0.05;
  std::size_t top_k = 5;
  // Replaces the per-sample schedule with one constant alpha (ablation).
  std::optional<double> alpha_const;

  void validate(std::size_t capacity) const;
};

// Mean binary cross-entropy of B x 1 probabilities; log arguments are clamped
// at 1e-12.
Var logloss(Var y_hat, std::span<const int> labels);

// In-batch InfoNCE, anchor z only. Negatives for anchor b are every z and z+
// at positions other than b. Returns the per-anchor loss (B x 1).
Var icl_per_anchor(Var z, Var z_plus, double tau);
Var icl_loss(Var z, Var z_plus, double tau);

struct AqclTerms {
  Var log_numerator;    // B x 1
  Var log_denominator;  // B x 1
  std::vector<std::vector<std::size_t>> positives;  // top-K codewords per anchor
};

// Instance/cluster contrastive terms. The numerator mixes the positive pair
// and the top-K codeword similarities geometrically with per-anchor alpha;
// the denominator sums every in-batch instance term and all T codewords.
AqclTerms aqcl_terms(Var z, Var z_plus, Var codewords, std::span<const double> alphas,
                     const LossConfig& cfg);
Var aqcl_per_anchor(Var z, Var z_plus, Var codewords, std::span<const double> alphas,
                    const LossConfig& cfg);
Var aqcl_loss(Var z, Var z_plus, Var codewords, std::span<const double> alphas,
              const LossConfig& cfg);

// L = L_c + w * L_aux
Var total_loss(Var logloss_value, Var aux, double weight);

}  // namespace aqcl
