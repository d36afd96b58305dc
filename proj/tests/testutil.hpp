#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "aqcl/data.hpp"
#include "aqcl/ndcore.hpp"
#include "aqcl/random.hpp"

namespace testutil {

using aqcl::nd::Tape;
using aqcl::nd::Tensor;
using aqcl::nd::Var;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.data) v = d(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Builds a scalar loss from leaf variables standing for `inputs`.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.param(t));
  return f(tape, leaves).value().item();
}

// Worst relative error between the tape gradient and central differences
// over every input tensor. Per tensor: |g - n|_2 / max(|g|_2, |n|_2, floor).
inline double gradient_error(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-6,
                             double floor = 1e-8) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.param(t));
    Var loss = f(tape, leaves);
    tape.backward(loss);
    for (const auto& v : leaves) analytic.push_back(tape.grad(v));
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k].data[i];
      inputs[k].data[i] = x + h;
      const double up = eval_scalar(f, inputs);
      inputs[k].data[i] = x - h;
      const double down = eval_scalar(f, inputs);
      inputs[k].data[i] = x;
      const double num = (up - down) / (2.0 * h);
      const double an = analytic[k].data[i];
      diff2 += (an - num) * (an - num);
      a2 += an * an;
      n2 += num * num;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

// Small generated dataset for fast end-to-end tests.
inline aqcl::GeneratorConfig small_generator(std::uint64_t seed, std::size_t users = 300) {
  aqcl::GeneratorConfig g;
  g.n_users = users;
  g.n_items = 120;
  g.seed = seed;
  return g;
}

// Brute-force pair count AUC: ties score 1/2.
inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / pairs;
}

}  // namespace testutil
