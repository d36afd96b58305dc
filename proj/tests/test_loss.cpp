#include <doctest.h>

#include <cmath>
#include <numeric>
#include <string>

#include "aqcl/codebook.hpp"
#include "aqcl/error.hpp"
#include "aqcl/log.hpp"
#include "aqcl/loss.hpp"
#include "testutil.hpp"

using namespace aqcl;
using testutil::random_tensor;

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / ((std::sqrt(aa) + 1e-12) * (std::sqrt(bb) + 1e-12));
}

// Straight transcription of the per-anchor contrastive formulas.
std::vector<double> icl_oracle(const Tensor& z, const Tensor& zp, double tau) {
  const std::size_t B = z.rows();
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double pos = std::exp(cosine(z.row(b), zp.row(b)) / tau);
    double den = pos;
    for (std::size_t o = 0; o < B; ++o) {
      if (o == b) continue;
      den += std::exp(cosine(z.row(b), z.row(o)) / tau);
      den += std::exp(cosine(z.row(b), zp.row(o)) / tau);
    }
    out[b] = -std::log(pos / den);
  }
  return out;
}

std::vector<double> aqcl_oracle(const Tensor& z, const Tensor& zp, const Tensor& q, const std::vector<double>& alpha,
                                double tau1, double tau2, std::size_t K) {
  const std::size_t B = z.rows(), T = q.rows();
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> sims(T);
    for (std::size_t t = 0; t < T; ++t) sims[t] = cosine(z.row(b), q.row(t));
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return sims[x] > sims[y]; });
    double cluster_pos = 0.0, cluster_all = 0.0;
    for (std::size_t k = 0; k < K; ++k) cluster_pos += std::exp(sims[order[k]] / tau2);
    for (double s : sims) cluster_all += std::exp(s / tau2);
    const double d1_pos = std::exp(cosine(z.row(b), zp.row(b)) / tau1);
    const double num = std::pow(d1_pos, 1.0 - alpha[b]) * std::pow(cluster_pos, alpha[b]);
    double den = d1_pos + cluster_all;
    for (std::size_t o = 0; o < B; ++o) {
      if (o == b) continue;
      den += std::exp(cosine(z.row(b), z.row(o)) / tau1);
      den += std::exp(cosine(z.row(b), zp.row(o)) / tau1);
    }
    out[b] = -std::log(num / den);
  }
  return out;
}

std::vector<double> per_anchor_icl(const Tensor& z, const Tensor& zp, double tau) {
  nd::Tape t;
  return icl_per_anchor(t.constant(z), t.constant(zp), tau).value().data;
}

std::vector<double> per_anchor_aqcl(const Tensor& z, const Tensor& zp, const Tensor& q, const std::vector<double>& a,
                                    const LossConfig& cfg) {
  nd::Tape t;
  return aqcl_per_anchor(t.constant(z), t.constant(zp), t.constant(q), a, cfg).value().data;
}

Tensor unit_rows(Tensor t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double n = 0;
    for (double v : t.row(r)) n += v * v;
    n = std::sqrt(n);
    for (double& v : t.row(r)) v /= n;
  }
  return t;
}

LossConfig cfg_k(std::size_t k, double tau1 = 0.1, double tau2 = 0.1) {
  LossConfig c;
  c.top_k = k;
  c.tau1 = tau1;
  c.tau2 = tau2;
  return c;
}

}  // namespace

TEST_CASE("logloss on hand examples") {
  nd::Tape t;
  std::vector<int> one{1};
  CHECK(logloss(t.constant(Tensor::scalar(0.5)), one).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  std::vector<int> two{1, 0};
  CHECK(logloss(t.constant(Tensor::matrix(2, 1, {0.9, 0.1})), two).value().item() ==
        doctest::Approx(-(std::log(0.9) + std::log(0.9)) / 2).epsilon(1e-14));
  CHECK(logloss(t.constant(Tensor::matrix(2, 1, {0.9, 0.1})), two).value().item() ==
        doctest::Approx(0.10536).epsilon(1e-4));
  // predictions exactly wrong sit on the clamp
  const double worst = logloss(t.constant(Tensor::matrix(2, 1, {0.0, 1.0})), two).value().item();
  CHECK(std::isfinite(worst));
  CHECK(worst == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK(worst == doctest::Approx(27.63).epsilon(1e-3));
}

TEST_CASE("logloss rejects predictions outside the unit interval") {
  nd::Tape t;
  std::vector<int> one{1};
  CHECK_THROWS_AS(logloss(t.constant(Tensor::scalar(1.5)), one), Error);
  CHECK_THROWS_AS(logloss(t.constant(Tensor::scalar(std::nan(""))), one), Error);
}

TEST_CASE("ICL with in-batch negatives against the scalar oracle") {
  // Anchor 0 has z = z+ and both in-batch negatives orthogonal, tau = 1.
  const Tensor z = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const auto got = per_anchor_icl(z, z, 1.0);
  CHECK(got[0] == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0))).epsilon(1e-10));
  // the single-negative form of the same computation
  CHECK(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)) == doctest::Approx(0.3133).epsilon(1e-4));

  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor a = random_tensor(5, 8, rng), b = random_tensor(5, 8, rng);
    const auto lib = per_anchor_icl(a, b, 0.3);
    const auto ref = icl_oracle(a, b, 0.3);
    for (std::size_t i = 0; i < 5; ++i) CHECK(lib[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("ICL with all similarities equal is log(1 + negatives) for any tau") {
  Tensor z(4, 3, 0.0);
  for (std::size_t r = 0; r < 4; ++r) z.at(r, 0) = 1.0 + r;  // same direction, different norms
  for (double tau : {1.0, 0.5, 0.1}) {
    nd::Tape t;
    const double l = icl_loss(t.constant(z), t.constant(z), tau).value().item();
    CHECK(l == doctest::Approx(std::log(1.0 + 6.0)).epsilon(1e-12));
  }
}

TEST_CASE("ICL decreases with temperature when the positive is the most similar") {
  const Tensor z = Tensor::matrix(3, 2, {1, 0, 0, 1, -1, 0.2});
  const Tensor zp = Tensor::matrix(3, 2, {1, 0.05, 0.05, 1, -1, 0.25});
  double prev = 1e300;
  for (double tau : {1.0, 0.5, 0.1}) {
    nd::Tape t;
    const double l = icl_loss(t.constant(z), t.constant(zp), tau).value().item();
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("ICL on a batch of one is zero and warns") {
  std::vector<std::string> seen;
  set_log_sink([&](const std::string& m) { seen.push_back(m); });
  nd::Tape t;
  const Tensor z = Tensor::matrix(1, 3, {1, 2, 3});
  CHECK(icl_loss(t.constant(z), t.constant(z), 0.1).value().item() == 0.0);
  set_log_sink(nullptr);
  CHECK(seen.size() == 1);
}

TEST_CASE("AQCL matches the brute-force scalar evaluation") {
  SUBCASE("single codeword equal to z, orthogonal negative, unit temperatures") {
    const Tensor z = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor q = Tensor::matrix(1, 2, {1, 0});
    std::vector<double> alpha{1.0, 1.0};
    const auto got = per_anchor_aqcl(z, z, q, alpha, cfg_k(1, 1.0, 1.0));
    const double e = std::exp(1.0);
    CHECK(got[0] == doctest::Approx(-std::log(e / (e + 1.0 + 1.0 + e))).epsilon(1e-10));
    CHECK(got[0] == doctest::Approx(aqcl_oracle(z, z, q, alpha, 1, 1, 1)[0]).epsilon(1e-14));
  }
  SUBCASE("random batches and mixed alphas") {
    for (int seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(100 + seed);
      const Tensor z = random_tensor(4, 8, rng), zp = random_tensor(4, 8, rng);
      const Tensor q = unit_rows(random_tensor(6, 8, rng));
      std::vector<double> alpha(4);
      for (double& a : alpha) a = std::uniform_real_distribution<double>(0, 1)(rng);
      const auto lib = per_anchor_aqcl(z, zp, q, alpha, cfg_k(2, 0.2, 0.3));
      const auto ref = aqcl_oracle(z, zp, q, alpha, 0.2, 0.3, 2);
      for (std::size_t i = 0; i < 4; ++i) CHECK(lib[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("alpha = 1 makes the log-numerator independent of z+") {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(200 + seed);
    const Tensor z = random_tensor(4, 8, rng), zp = random_tensor(4, 8, rng), zp2 = random_tensor(4, 8, rng);
    const Tensor q = unit_rows(random_tensor(6, 8, rng));
    std::vector<double> alpha(4, 1.0);
    nd::Tape t;
    auto a = aqcl_terms(t.constant(z), t.constant(zp), t.constant(q), alpha, cfg_k(2));
    auto b = aqcl_terms(t.constant(z), t.constant(zp2), t.constant(q), alpha, cfg_k(2));
    CHECK(testutil::max_abs_diff(a.log_numerator.value(), b.log_numerator.value()) <= 1e-10);
  }
}

TEST_CASE("alpha = 0 bounds ICL from above per anchor") {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(300 + seed);
    const Tensor z = random_tensor(6, 8, rng), zp = random_tensor(6, 8, rng);
    const Tensor q = unit_rows(random_tensor(6, 8, rng));
    std::vector<double> alpha(6, 0.0);
    const auto aq = per_anchor_aqcl(z, zp, q, alpha, cfg_k(2, 0.1));
    const auto ic = per_anchor_icl(z, zp, 0.1);
    for (std::size_t i = 0; i < 6; ++i) CHECK(aq[i] >= ic[i]);
  }
}

TEST_CASE("contrastive losses see only directions") {
  std::mt19937_64 rng(400);
  const Tensor z = random_tensor(4, 8, rng), zp = random_tensor(4, 8, rng);
  const Tensor q = unit_rows(random_tensor(6, 8, rng));
  std::vector<double> alpha{0.1, 0.5, 0.9, 1.0};
  Tensor zs = z, zps = zp;
  for (std::size_t r = 0; r < 4; ++r) {
    for (double& v : zs.row(r)) v *= 0.3 + r;
    for (double& v : zps.row(r)) v *= 7.0 / (1 + r);
  }
  const auto a = per_anchor_aqcl(z, zp, q, alpha, cfg_k(2));
  const auto b = per_anchor_aqcl(zs, zps, q, alpha, cfg_k(2));
  const auto c = per_anchor_icl(z, zp, 0.1);
  const auto d = per_anchor_icl(zs, zps, 0.1);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(a[i] - b[i]) <= 1e-10);
    CHECK(std::abs(c[i] - d[i]) <= 1e-10);
  }
}

TEST_CASE("AQCL is permutation-equivariant over the batch") {
  std::mt19937_64 rng(500);
  const Tensor z = random_tensor(5, 8, rng), zp = random_tensor(5, 8, rng);
  const Tensor q = unit_rows(random_tensor(6, 8, rng));
  std::vector<double> alpha{0.1, 0.5, 0.9, 1.0, 0.0};
  const std::vector<std::size_t> perm{3, 1, 4, 0, 2};
  Tensor zP(5, 8), zpP(5, 8);
  std::vector<double> alphaP(5);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      zP.at(i, j) = z.at(perm[i], j);
      zpP.at(i, j) = zp.at(perm[i], j);
    }
    alphaP[i] = alpha[perm[i]];
  }
  const auto a = per_anchor_aqcl(z, zp, q, alpha, cfg_k(2));
  const auto b = per_anchor_aqcl(zP, zpP, q, alphaP, cfg_k(2));
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(b[i] - a[perm[i]]) <= 1e-13);
  CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0) / 5 - std::accumulate(b.begin(), b.end(), 0.0) / 5) <=
        1e-13);
}

TEST_CASE("loss gradients pass finite differences on random batches") {
  for (int seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(600 + seed);
    const Tensor z = random_tensor(4, 8, rng), zp = random_tensor(4, 8, rng);
    const Tensor q = unit_rows(random_tensor(6, 8, rng));
    std::vector<double> alpha(4);
    for (double& a : alpha) a = std::uniform_real_distribution<double>(0, 1)(rng);
    std::vector<int> labels{1, 0, 0, 1};
    const Tensor logits = random_tensor(4, 1, rng, -2, 2);

    testutil::ScalarFn ll = [&](nd::Tape&, const std::vector<Var>& v) { return logloss(nd::sigmoid(v[0]), labels); };
    CHECK(testutil::gradient_error(ll, {logits}) <= 1e-4);

    testutil::ScalarFn icl = [&](nd::Tape&, const std::vector<Var>& v) { return icl_loss(v[0], v[1], 0.1); };
    CHECK(testutil::gradient_error(icl, {z, zp}) <= 1e-4);

    const LossConfig cfg = cfg_k(2);
    testutil::ScalarFn aq = [&](nd::Tape&, const std::vector<Var>& v) { return aqcl_loss(v[0], v[1], v[2], alpha, cfg); };
    CHECK(testutil::gradient_error(aq, {z, zp, q}) <= 1e-4);

    const Tensor onehot = discretize(random_tensor(6, 4, rng, 0, 1));
    testutil::ScalarFn cb = [&](nd::Tape& t, const std::vector<Var>& v) {
      return codebook_loss(v[0], t.constant(z), onehot, 0.1);
    };
    CHECK(testutil::gradient_error(cb, {q}) <= 1e-4);
  }
}

TEST_CASE("total loss composes linearly") {
  nd::Tape t;
  CHECK(total_loss(t.constant(Tensor::scalar(0.7)), t.constant(Tensor::scalar(2.0)), 0.05).value().item() ==
        doctest::Approx(0.8).epsilon(1e-15));
  CHECK(total_loss(t.constant(Tensor::scalar(0.7)), t.constant(Tensor::scalar(2.0)), 0.0).value().item() == 0.7);

  std::mt19937_64 rng(700);
  const Tensor z0 = random_tensor(4, 8, rng), zp0 = random_tensor(4, 8, rng);
  const Tensor q0 = unit_rows(random_tensor(6, 8, rng));
  const Tensor logits0 = random_tensor(4, 8, rng);
  std::vector<double> alpha{0.2, 0.4, 0.6, 0.8};
  std::vector<int> labels{1, 1, 0, 0};
  const double w = 0.05;
  auto run = [&](int which) {
    nd::Tape tape;
    Var z = tape.param(z0), zp = tape.param(zp0), q = tape.param(q0), lg = tape.param(logits0);
    // logloss sees z through a fixed readout so both terms touch the same leaf
    Var y = nd::sigmoid(nd::row_sum(nd::mul(z, lg)));
    Var l1 = logloss(y, labels);
    Var l2 = aqcl_loss(z, zp, q, alpha, cfg_k(2));
    Var loss = which == 0 ? total_loss(l1, l2, w) : which == 1 ? l1 : l2;
    tape.backward(loss);
    return tape.grad(z);
  };
  const Tensor gt = run(0), g1 = run(1), g2 = run(2);
  for (std::size_t i = 0; i < gt.size(); ++i) CHECK(std::abs(gt.data[i] - (g1.data[i] + w * g2.data[i])) <= 1e-12);
}

TEST_CASE("K larger than the codebook is a configuration error") {
  nd::Tape t;
  std::mt19937_64 rng(800);
  const Tensor z = random_tensor(3, 4, rng);
  std::vector<double> alpha(3, 0.5);
  try {
    aqcl_loss(t.constant(z), t.constant(z), t.constant(unit_rows(random_tensor(2, 4, rng))), alpha, cfg_k(3));
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}
