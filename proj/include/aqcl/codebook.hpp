#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "aqcl/ndcore.hpp"
#include "aqcl/random.hpp"

namespace aqcl {

using nd::Tensor;
using nd::Var;

// T interest codewords on the unit sphere, one per row.
struct Codebook {
  Tensor codewords;  // T x z_dim
  double tau3 = 0.1;

  std::size_t capacity() const { return codewords.rows(); }
  std::size_t dim() const { return codewords.cols(); }

  // Rows drawn uniformly on the unit sphere.
  static Codebook random(std::size_t capacity, std::size_t dim, double tau3, Rng& rng);
  void renormalize();
};

struct SinkhornConfig {
  double epsilon = 0.05;
  std::size_t n_iters = 3;

  void validate() const;
};

// Cosine similarity of every row of `a` with every row of `b` (|a| x |b|).
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

// Balanced soft assignment of a batch to codewords (T x B). Starts from
// exp(cos/eps) with a per-column max shift, then alternates column scaling
// (columns sum to 1/B) and row scaling (rows sum to 1/T) for n_iters rounds,
// finishing on a row step.
Tensor sinkhorn_assign(const Tensor& codewords, const Tensor& batch, const SinkhornConfig& cfg);

// Per column, the row index of the maximum (lowest index on ties).
std::vector<std::size_t> assignment_argmax(const Tensor& assignment);

// One-hot T x B matrix built from assignment_argmax.
Tensor discretize(const Tensor& assignment);

// Cross-entropy between the one-hot codes and softmax(cos(sg(z), q)/tau3),
// summed over the batch. `z` must already be stop-gradiented by the caller
// when only the codebook is to be trained; `codewords` carries the gradient.
Var codebook_loss(Var codewords, Var z, const Tensor& onehot, double tau3);

// K indices with the largest values, descending, lowest index first on ties.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);

// Top-K codewords by cosine similarity to z.
std::vector<std::size_t> topk_codewords(const Tensor& codewords, std::span<const double> z,
                                        std::size_t k);

// Usage histogram of discrete assignments over the T codewords.
std::vector<std::size_t> usage_histogram(std::span<const std::size_t> assignments,
                                         std::size_t capacity);

}  // namespace aqcl
