#include "aqcl/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aqcl/error.hpp"

namespace aqcl {

namespace {

constexpr double kNormGuard = 1e-12;

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

}  // namespace

Codebook Codebook::random(std::size_t capacity, std::size_t dim, double tau3, Rng& rng) {
  if (capacity < 2) fail(ErrorCode::Config, "codebook: capacity must be >= 2");
  if (dim == 0) fail(ErrorCode::Config, "codebook: dimension must be positive");
  if (!(tau3 > 0.0)) fail(ErrorCode::Config, "codebook: tau3 must be positive");
  Codebook cb;
  cb.tau3 = tau3;
  cb.codewords = Tensor(capacity, dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t t = 0; t < capacity; ++t) {
    auto row = cb.codewords.row(t);
    do {
      for (double& v : row) v = gauss(rng);
    } while (row_norm(row) < 1e-8);
  }
  cb.renormalize();
  return cb;
}

void Codebook::renormalize() {
  for (std::size_t t = 0; t < codewords.rows(); ++t) {
    auto row = codewords.row(t);
    const double n = row_norm(row);
    if (n > 0.0)
      for (double& v : row) v /= n;
  }
}

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0)) fail(ErrorCode::Config, "sinkhorn: epsilon must be positive");
  if (n_iters < 1) fail(ErrorCode::Config, "sinkhorn: n_iters must be >= 1");
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::Shape, "cosine_matrix: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  std::vector<double> na(m), nb(n);
  for (std::size_t i = 0; i < m; ++i) na[i] = row_norm(a.row(i)) + kNormGuard;
  for (std::size_t j = 0; j < n; ++j) nb[j] = row_norm(b.row(j)) + kNormGuard;
  Tensor s(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data.data() + j * d;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += ai[k] * bj[k];
      s.at(i, j) = dot / (na[i] * nb[j]);
    }
  }
  return s;
}

Tensor sinkhorn_assign(const Tensor& codewords, const Tensor& batch, const SinkhornConfig& cfg) {
  cfg.validate();
  const std::size_t T = codewords.rows(), B = batch.rows();
  if (B == 0) fail(ErrorCode::InvalidArgument, "sinkhorn_assign: empty batch");
  Tensor a = cosine_matrix(codewords, batch);
  for (std::size_t b = 0; b < B; ++b) {
    double mx = a.at(0, b);
    for (std::size_t t = 1; t < T; ++t) mx = std::max(mx, a.at(t, b));
    for (std::size_t t = 0; t < T; ++t) a.at(t, b) = std::exp((a.at(t, b) - mx) / cfg.epsilon);
  }
  const double col_target = 1.0 / static_cast<double>(B);
  const double row_target = 1.0 / static_cast<double>(T);
  std::vector<double> col(B);
  for (std::size_t it = 0; it < cfg.n_iters; ++it) {
    std::fill(col.begin(), col.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t b = 0; b < B; ++b) col[b] += a.at(t, b);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t b = 0; b < B; ++b) a.at(t, b) *= col_target / col[b];
    for (std::size_t t = 0; t < T; ++t) {
      auto r = a.row(t);
      const double s = std::accumulate(r.begin(), r.end(), 0.0);
      for (double& v : r) v *= row_target / s;
    }
  }
  return a;
}

std::vector<std::size_t> assignment_argmax(const Tensor& assignment) {
  const std::size_t T = assignment.rows(), B = assignment.cols();
  std::vector<std::size_t> out(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 1; t < T; ++t)
      if (assignment.at(t, b) > assignment.at(out[b], b)) out[b] = t;
  }
  return out;
}

Tensor discretize(const Tensor& assignment) {
  Tensor onehot(assignment.rows(), assignment.cols());
  const auto idx = assignment_argmax(assignment);
  for (std::size_t b = 0; b < idx.size(); ++b) onehot.at(idx[b], b) = 1.0;
  return onehot;
}

Var codebook_loss(Var codewords, Var z, const Tensor& onehot, double tau3) {
  const Tensor& q = codewords.value();
  const Tensor& zv = z.value();
  if (onehot.rows() != q.rows() || onehot.cols() != zv.rows()) {
    fail(ErrorCode::Shape, "codebook_loss: codes " + onehot.shape_str() + " vs codewords " +
                               q.shape_str() + " and batch " + zv.shape_str());
  }
  nd::Tape& tape = *codewords.tape;
  Var sims = nd::matmul(nd::l2_normalize(z), nd::transpose(nd::l2_normalize(codewords)));
  Var p = nd::softmax(nd::scale(sims, 1.0 / tau3));
  // onehot is T x B; the probabilities are B x T
  Tensor codes(zv.rows(), q.rows());
  for (std::size_t t = 0; t < onehot.rows(); ++t)
    for (std::size_t b = 0; b < onehot.cols(); ++b) codes.at(b, t) = onehot.at(t, b);
  return nd::scale(nd::sum(nd::mul(nd::log(p), tape.constant(std::move(codes)))), -1.0);
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  if (k < 1 || k > values.size()) {
    fail(ErrorCode::Config, "top-k: K=" + std::to_string(k) + " must lie in [1, " +
                                std::to_string(values.size()) + "]");
  }
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> topk_codewords(const Tensor& codewords, std::span<const double> z,
                                        std::size_t k) {
  Tensor zt = Tensor::matrix(1, z.size(), {z.begin(), z.end()});
  Tensor sims = cosine_matrix(zt, codewords);
  return topk_indices(sims.data, k);
}

std::vector<std::size_t> usage_histogram(std::span<const std::size_t> assignments,
                                         std::size_t capacity) {
  std::vector<std::size_t> h(capacity, 0);
  for (auto a : assignments) {
    if (a >= capacity) fail(ErrorCode::Index, "usage_histogram: codeword index out of range");
    ++h[a];
  }
  return h;
}

}  // namespace aqcl
