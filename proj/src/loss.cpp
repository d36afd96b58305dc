#include "aqcl/loss.hpp"

#include <cmath>

#include "aqcl/codebook.hpp"
#include "aqcl/error.hpp"
#include "aqcl/log.hpp"

namespace aqcl {

namespace {

constexpr double kLogClamp = 1e-12;

void check_pair(const char* op, Var z, Var z_plus) {
  if (!z.value().same_shape(z_plus.value()) || z.value().rank() != 2) {
    fail(ErrorCode::Shape, std::string(op) + ": shape mismatch " + z.value().shape_str() + " vs " +
                               z_plus.value().shape_str());
  }
}

// exp(sim/tau) over all B x 2B anchor/candidate pairs with the anchor's own
// column masked out, summed per row.
Var instance_denominator(Var zn, Var zpn, double tau) {
  nd::Tape& tape = *zn.tape;
  const std::size_t B = zn.value().rows();
  Var all = nd::matmul(zn, nd::transpose(nd::concat_rows(zpn, zn)));
  Tensor mask(B, 2 * B, 1.0);
  for (std::size_t b = 0; b < B; ++b) mask.at(b, B + b) = 0.0;
  return nd::row_sum(nd::mul(nd::exp(nd::scale(all, 1.0 / tau)), tape.constant(std::move(mask))));
}

}  // namespace

void LossConfig::validate(std::size_t capacity) const {
  if (!(tau1 > 0.0 && tau2 > 0.0 && icl_tau > 0.0))
    fail(ErrorCode::Config, "loss: temperatures must be positive");
  if (!(aux_weight >= 0.0)) fail(ErrorCode::Config, "loss: aux_weight must be >= 0");
  if (top_k < 1 || top_k > capacity)
    fail(ErrorCode::Config, "loss: top_k=" + std::to_string(top_k) + " must lie in [1, T=" +
                                std::to_string(capacity) + "]");
  if (alpha_const && !(*alpha_const >= 0.0 && *alpha_const <= 1.0))
    fail(ErrorCode::Config, "loss: alpha_const must lie in [0,1]");
}

Var logloss(Var y_hat, std::span<const int> labels) {
  const Tensor& p = y_hat.value();
  if (p.size() != labels.size() || p.size() == 0) {
    fail(ErrorCode::Shape, "logloss: " + std::to_string(p.size()) + " predictions vs " +
                               std::to_string(labels.size()) + " labels");
  }
  for (double v : p.data) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::InvalidArgument, "logloss: prediction outside [0,1]");
  }
  // q = y ? p : 1 - p  ==  (1 - y) + (2y - 1) p
  Tensor sign(p.rows(), p.cols()), offset(p.rows(), p.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorCode::InvalidArgument, "logloss: label not in {0,1}");
    sign.data[i] = labels[i] ? 1.0 : -1.0;
    offset.data[i] = labels[i] ? 0.0 : 1.0;
  }
  nd::Tape& tape = *y_hat.tape;
  Var q = nd::add(nd::mul(y_hat, tape.constant(std::move(sign))), tape.constant(std::move(offset)));
  return nd::scale(nd::mean(nd::log(nd::clamp_min(q, kLogClamp))), -1.0);
}

Var icl_per_anchor(Var z, Var z_plus, double tau) {
  check_pair("icl_loss", z, z_plus);
  if (!(tau > 0.0)) fail(ErrorCode::Config, "icl_loss: tau must be positive");
  const std::size_t B = z.value().rows();
  if (B == 1) {
    log_warning("icl_loss: batch of one has no negatives; loss is 0");
    return z.tape->constant(Tensor(1, 1));
  }
  Var zn = nd::l2_normalize(z);
  Var zpn = nd::l2_normalize(z_plus);
  Var pos = nd::scale(nd::row_dot(zn, zpn), 1.0 / tau);
  return nd::sub(nd::log(instance_denominator(zn, zpn, tau)), pos);
}

Var icl_loss(Var z, Var z_plus, double tau) { return nd::mean(icl_per_anchor(z, z_plus, tau)); }

AqclTerms aqcl_terms(Var z, Var z_plus, Var codewords, std::span<const double> alphas,
                     const LossConfig& cfg) {
  check_pair("aqcl_loss", z, z_plus);
  const Tensor& q = codewords.value();
  const std::size_t B = z.value().rows(), T = q.rows();
  if (q.cols() != z.value().cols()) {
    fail(ErrorCode::Shape, "aqcl_loss: codewords " + q.shape_str() + " vs z " + z.value().shape_str());
  }
  if (alphas.size() != B) fail(ErrorCode::Shape, "aqcl_loss: need one alpha per anchor");
  cfg.validate(T);
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) fail(ErrorCode::InvalidArgument, "aqcl_loss: alpha outside [0,1]");

  nd::Tape& tape = *z.tape;
  Var zn = nd::l2_normalize(z);
  Var zpn = nd::l2_normalize(z_plus);
  Var qn = nd::l2_normalize(codewords);

  Var inst_den = instance_denominator(zn, zpn, cfg.tau1);
  Var cluster_sims = nd::matmul(zn, nd::transpose(qn));  // B x T
  Var cluster_exp = nd::exp(nd::scale(cluster_sims, 1.0 / cfg.tau2));

  AqclTerms out;
  Tensor topk_mask(B, T);
  for (std::size_t b = 0; b < B; ++b) {
    out.positives.push_back(topk_indices(cluster_sims.value().row(b), cfg.top_k));
    for (auto t : out.positives.back()) topk_mask.at(b, t) = 1.0;
  }
  Var cluster_pos = nd::row_sum(nd::mul(cluster_exp, tape.constant(std::move(topk_mask))));

  Tensor w_inst(B, 1), w_clu(B, 1);
  for (std::size_t b = 0; b < B; ++b) {
    w_inst.data[b] = (1.0 - alphas[b]) / cfg.tau1;
    w_clu.data[b] = alphas[b];
  }
  Var inst_term = nd::mul(nd::row_dot(zn, zpn), tape.constant(std::move(w_inst)));
  Var clu_term = nd::mul(nd::log(cluster_pos), tape.constant(std::move(w_clu)));
  out.log_numerator = nd::add(inst_term, clu_term);
  out.log_denominator = nd::log(nd::add(inst_den, nd::row_sum(cluster_exp)));
  return out;
}

Var aqcl_per_anchor(Var z, Var z_plus, Var codewords, std::span<const double> alphas,
                    const LossConfig& cfg) {
  AqclTerms t = aqcl_terms(z, z_plus, codewords, alphas, cfg);
  return nd::sub(t.log_denominator, t.log_numerator);
}

Var aqcl_loss(Var z, Var z_plus, Var codewords, std::span<const double> alphas,
              const LossConfig& cfg) {
  return nd::mean(aqcl_per_anchor(z, z_plus, codewords, alphas, cfg));
}

Var total_loss(Var logloss_value, Var aux, double weight) {
  return nd::add(logloss_value, nd::scale(aux, weight));
}

}  // namespace aqcl
