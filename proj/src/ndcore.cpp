#include "aqcl/ndcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "aqcl/error.hpp"

namespace aqcl::nd {

namespace {

constexpr double kNormGuard = 1e-12;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  fail(ErrorCode::Shape, std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    fail(ErrorCode::Shape,
         std::string(op) + ": expected a matrix, got " + a.shape_str());
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c (m x n) += a (m x k) * b (k x n)
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  MutMap(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, k, n);
}

// c (m x n) += a (m x k) * b^T, b is (n x k)
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  MutMap(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, n, k).transpose();
}

// c (k x n) += a^T * b, a is (m x k), b is (m x n)
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  MutMap(c, k, n).noalias() += ConstMap(a, m, k).transpose() * ConstMap(b, m, n);
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) fail(ErrorCode::InvalidArgument, "variable without tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) {
    fail(ErrorCode::InvalidArgument, "operands recorded on different tapes");
  }
  return tape_of(a);
}

void check_offsets(const char* op, const std::vector<std::size_t>& offsets,
                   std::size_t rows) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    fail(ErrorCode::Shape, std::string(op) + ": segment offsets do not cover " +
                               std::to_string(rows) + " rows");
  }
}

template <typename F, typename D>
Var unary_elementwise(Var a, F&& forward, D dydx) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor y = zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = forward(x.data[i]);
  const std::size_t ia = a.id;
  return t.push(std::move(y), {ia}, [ia, dydx](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    const Tensor& xv = tp.value(ia);
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.adjoint(ia);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      ga.data[i] += g->data[i] * dydx(xv.data[i], yv.data[i]);
    }
  });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape{rows, cols}, data(rows * cols, fill) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        std::multiplies<>());
  if (n != data.size()) {
    fail(ErrorCode::Shape, "tensor: shape " + shape_str() + " holds " +
                               std::to_string(n) + " values, got " +
                               std::to_string(data.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape.empty()) return 1;
  return shape.size() == 1 ? 1 : shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  return shape.back();
}

double Tensor::item() const {
  if (data.size() != 1) {
    fail(ErrorCode::Shape, "item: tensor is not scalar: " + shape_str());
  }
  return data[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::same_shape(const Tensor& other) const { return shape == other.shape; }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor zeros_like(const Tensor& t) {
  Tensor z;
  z.shape = t.shape;
  z.data.assign(t.data.size(), 0.0);
  return z;
}

const Tensor& Var::value() const { return tape->value(id); }

// ---- Tape -----------------------------------------------------------------

Var Tape::param(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool rg = false;
  for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
  Node n{std::move(value), std::move(inputs), rg ? std::move(fn) : nullptr, rg};
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) fail(ErrorCode::InvalidArgument, "backward: foreign node");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1) {
    fail(ErrorCode::Shape, "backward: loss must be scalar, got " + lv.shape_str());
  }
  adjoints_.assign(nodes_.size(), Tensor{});
  touched_.assign(nodes_.size(), false);
  if (!nodes_[loss.id].requires_grad) return;
  adjoint(loss.id).data[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (touched_[i] && nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < touched_.size() && touched_[v.id]) return adjoints_[v.id];
  return zeros_like(nodes_[v.id].value);
}

Tensor& Tape::adjoint(std::size_t id) {
  if (!touched_[id]) {
    adjoints_[id] = zeros_like(nodes_[id].value);
    touched_[id] = true;
  }
  return adjoints_[id];
}

const Tensor* Tape::adjoint_if_any(std::size_t id) const {
  return touched_[id] ? &adjoints_[id] : nullptr;
}

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul", A);
  require_matrix("matmul", B);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n);
  gemm_acc(A.data.data(), B.data.data(), C.data.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    if (tp.requires_grad(ia)) {
      gemm_nt_acc(g->data.data(), tp.value(ib).data.data(),
                  tp.adjoint(ia).data.data(), m, n, k);
    }
    if (tp.requires_grad(ib)) {
      gemm_tn_acc(tp.value(ia).data.data(), g->data.data(),
                  tp.adjoint(ib).data.data(), m, k, n);
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  require_matrix("transpose", A);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(j, i) = A.at(i, j);
  const std::size_t ia = a.id;
  return t.push(std::move(y), {ia}, [ia, m, n](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    Tensor& ga = tp.adjoint(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g->at(j, i);
  });
}

namespace {

Var binary_same_shape(const char* op, Var a, Var b, double sign_b, bool product) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error(op, A, B);
  Tensor y = zeros_like(A);
  for (std::size_t i = 0; i < A.size(); ++i) {
    y.data[i] = product ? A.data[i] * B.data[i] : A.data[i] + sign_b * B.data[i];
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(y), {ia, ib},
                [ia, ib, sign_b, product](Tape& tp, std::size_t self) {
                  const Tensor* g = tp.adjoint_if_any(self);
                  if (!g) return;
                  const std::size_t n = g->size();
                  if (tp.requires_grad(ia)) {
                    Tensor& ga = tp.adjoint(ia);
                    const Tensor& bv = tp.value(ib);
                    for (std::size_t i = 0; i < n; ++i)
                      ga.data[i] += product ? g->data[i] * bv.data[i] : g->data[i];
                  }
                  if (tp.requires_grad(ib)) {
                    Tensor& gb = tp.adjoint(ib);
                    const Tensor& av = tp.value(ia);
                    for (std::size_t i = 0; i < n; ++i)
                      gb.data[i] += product ? g->data[i] * av.data[i] : sign_b * g->data[i];
                  }
                });
}

}  // namespace

Var add(Var a, Var b) { return binary_same_shape("add", a, b, 1.0, false); }
Var sub(Var a, Var b) { return binary_same_shape("sub", a, b, -1.0, false); }
Var mul(Var a, Var b) { return binary_same_shape("mul", a, b, 0.0, true); }

Var scale(Var a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_bias(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  require_matrix("add_bias", A);
  if (b.size() != A.cols() || b.rows() != 1) shape_error("add_bias", A, b);
  Tensor y = A;
  const std::size_t m = A.rows(), n = A.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.data[i * n + j] += b.data[j];
  const std::size_t ia = a.id, ib = bias.id;
  return t.push(std::move(y), {ia, ib}, [ia, ib, m, n](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.adjoint(ia);
      for (std::size_t i = 0; i < g->size(); ++i) ga.data[i] += g->data[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.adjoint(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb.data[j] += g->data[i * n + j];
    }
  });
}

Var mul_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  const Tensor& A = a.value();
  const Tensor& c = col.value();
  require_matrix("mul_col", A);
  if (c.rank() != 2 || c.rows() != A.rows() || c.cols() != 1) shape_error("mul_col", A, c);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y = A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.data[i * n + j] *= c.data[i];
  const std::size_t ia = a.id, ic = col.id;
  return t.push(std::move(y), {ia, ic}, [ia, ic, m, n](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.adjoint(ia);
      const Tensor& cv = tp.value(ic);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga.data[i * n + j] += g->data[i * n + j] * cv.data[i];
    }
    if (tp.requires_grad(ic)) {
      Tensor& gc = tp.adjoint(ic);
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += g->data[i * n + j] * av.data[i * n + j];
        gc.data[i] += s;
      }
    }
  });
}

Var leaky_relu(Var a, double slope) {
  return unary_elementwise(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var clamp_min(Var a, double lo) {
  return unary_elementwise(
      a, [lo](double x) { return x < lo ? lo : x; },
      [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

Var add_scalar(Var a, double c) {
  return unary_elementwise(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary_elementwise(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
  for (double v : a.value().data) {
    if (!(v > 0.0)) fail(ErrorCode::InvalidArgument, "log: argument must be positive");
  }
  return unary_elementwise(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var l2_normalize(Var a) {
  Tape& t = tape_of(a);
  const Tensor& X = a.value();
  const std::size_t m = X.rows(), n = X.cols();
  Tensor y = X;
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += X.data[i * n + j] * X.data[i * n + j];
    norms[i] = std::sqrt(s);
    const double d = norms[i] + kNormGuard;
    for (std::size_t j = 0; j < n; ++j) y.data[i * n + j] /= d;
  }
  const std::size_t ia = a.id;
  return t.push(std::move(y), {ia},
                [ia, m, n, norms = std::move(norms)](Tape& tp, std::size_t self) {
                  const Tensor* g = tp.adjoint_if_any(self);
                  if (!g) return;
                  const Tensor& xv = tp.value(ia);
                  Tensor& ga = tp.adjoint(ia);
                  for (std::size_t i = 0; i < m; ++i) {
                    const double nr = norms[i];
                    const double d = nr + kNormGuard;
                    double xg = 0.0;
                    for (std::size_t j = 0; j < n; ++j) xg += xv.data[i * n + j] * g->data[i * n + j];
                    const double coef = nr > 0.0 ? xg / (d * d * nr) : 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      ga.data[i * n + j] += g->data[i * n + j] / d - coef * xv.data[i * n + j];
                    }
                  }
                });
}

Var row_dot(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error("row_dot", A, B);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += A.data[i * n + j] * B.data[i * n + j];
    y.data[i] = s;
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(y), {ia, ib}, [ia, ib, m, n](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    for (auto [src, dst] : {std::pair{ib, ia}, std::pair{ia, ib}}) {
      if (!tp.requires_grad(dst)) continue;
      const Tensor& other = tp.value(src);
      Tensor& gd = tp.adjoint(dst);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gd.data[i * n + j] += g->data[i] * other.data[i * n + j];
    }
  });
}

Var row_sum(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += A.data[i * n + j];
    y.data[i] = s;
  }
  const std::size_t ia = a.id;
  return t.push(std::move(y), {ia}, [ia, m, n](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    Tensor& ga = tp.adjoint(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.data[i * n + j] += g->data[i];
  });
}

namespace {

Var reduce_all(Var a, double factor) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  double s = 0.0;
  for (double v : A.data) s += v;
  const std::size_t ia = a.id;
  return t.push(Tensor::scalar(s * factor), {ia}, [ia, factor](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    Tensor& ga = tp.adjoint(ia);
    const double gv = g->data[0] * factor;
    for (double& v : ga.data) v += gv;
  });
}

}  // namespace

Var sum(Var a) { return reduce_all(a, 1.0); }

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) fail(ErrorCode::Shape, "mean: empty tensor");
  return reduce_all(a, 1.0 / static_cast<double>(n));
}

Var softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& X = a.value();
  const std::size_t m = X.rows(), n = X.cols();
  Tensor y = X;
  for (std::size_t i = 0; i < m; ++i) {
    auto r = y.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : r) v /= s;
  }
  const std::size_t ia = a.id;
  return t.push(std::move(y), {ia}, [ia, m, n](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.adjoint(ia);
    for (std::size_t i = 0; i < m; ++i) {
      double gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) gy += g->data[i * n + j] * yv.data[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        ga.data[i * n + j] += yv.data[i * n + j] * (g->data[i * n + j] - gy);
    }
  });
}

Var gather_rows(Var table, std::vector<std::size_t> index) {
  Tape& t = tape_of(table);
  const Tensor& W = table.value();
  require_matrix("gather_rows", W);
  const std::size_t n = W.cols();
  Tensor y(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= W.rows()) {
      fail(ErrorCode::Index, "gather_rows: index " + std::to_string(index[i]) +
                                 " out of range for table " + W.shape_str());
    }
    std::copy_n(W.data.begin() + static_cast<std::ptrdiff_t>(index[i] * n), n,
                y.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  const std::size_t iw = table.id;
  return t.push(std::move(y), {iw}, [iw, n, index = std::move(index)](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    Tensor& gw = tp.adjoint(iw);
    for (std::size_t i = 0; i < index.size(); ++i) {
      double* dst = gw.data.data() + index[i] * n;
      const double* src = g->data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

namespace {

Var segment_reduce(const char* op, Var a, std::vector<std::size_t> offsets, bool average) {
  Tape& t = tape_of(a);
  const Tensor& X = a.value();
  require_matrix(op, X);
  check_offsets(op, offsets, X.rows());
  const std::size_t segs = offsets.size() - 1, n = X.cols();
  Tensor y(segs, n);
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    if (len == 0) continue;
    const double f = average ? 1.0 / static_cast<double>(len) : 1.0;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t j = 0; j < n; ++j) y.data[s * n + j] += X.data[r * n + j];
    for (std::size_t j = 0; j < n; ++j) y.data[s * n + j] *= f;
  }
  const std::size_t ia = a.id;
  return t.push(std::move(y), {ia},
                [ia, n, average, offsets = std::move(offsets)](Tape& tp, std::size_t self) {
                  const Tensor* g = tp.adjoint_if_any(self);
                  if (!g) return;
                  Tensor& ga = tp.adjoint(ia);
                  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                    const std::size_t len = offsets[s + 1] - offsets[s];
                    if (len == 0) continue;
                    const double f = average ? 1.0 / static_cast<double>(len) : 1.0;
                    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
                      for (std::size_t j = 0; j < n; ++j) ga.data[r * n + j] += f * g->data[s * n + j];
                  }
                });
}

}  // namespace

Var segment_sum(Var a, std::vector<std::size_t> offsets) {
  return segment_reduce("segment_sum", a, std::move(offsets), false);
}

Var segment_mean(Var a, std::vector<std::size_t> offsets) {
  return segment_reduce("segment_mean", a, std::move(offsets), true);
}

Var segment_softmax(Var a, std::vector<std::size_t> offsets) {
  Tape& t = tape_of(a);
  const Tensor& X = a.value();
  if (X.rank() != 2 || X.cols() != 1) {
    fail(ErrorCode::Shape, "segment_softmax: expected N x 1 logits, got " + X.shape_str());
  }
  check_offsets("segment_softmax", offsets, X.rows());
  Tensor y = X;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const auto b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    double mx = y.data[b];
    for (auto r = b; r < e; ++r) mx = std::max(mx, y.data[r]);
    double tot = 0.0;
    for (auto r = b; r < e; ++r) {
      y.data[r] = std::exp(y.data[r] - mx);
      tot += y.data[r];
    }
    for (auto r = b; r < e; ++r) y.data[r] /= tot;
  }
  const std::size_t ia = a.id;
  return t.push(std::move(y), {ia}, [ia, offsets = std::move(offsets)](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.adjoint(ia);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      double gy = 0.0;
      for (auto r = offsets[s]; r < offsets[s + 1]; ++r) gy += g->data[r] * yv.data[r];
      for (auto r = offsets[s]; r < offsets[s + 1]; ++r) ga.data[r] += yv.data[r] * (g->data[r] - gy);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::Shape, "concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t m = parts.front().value().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    const Tensor& v = p.value();
    require_matrix("concat_cols", v);
    if (v.rows() != m) shape_error("concat_cols", parts.front().value(), v);
    ids.push_back(p.id);
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor y(m, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                  y.data.begin() + static_cast<std::ptrdiff_t>(i * total + off));
    off += widths[k];
  }
  std::vector<std::size_t> inputs = ids;
  return t.push(std::move(y), std::move(inputs),
                [ids, widths, m, total](Tape& tp, std::size_t self) {
                  const Tensor* g = tp.adjoint_if_any(self);
                  if (!g) return;
                  std::size_t o = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (tp.requires_grad(ids[k])) {
                      Tensor& gk = tp.adjoint(ids[k]);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                          gk.data[i * widths[k] + j] += g->data[i * total + o + j];
                    }
                    o += widths[k];
                  }
                });
}

Var concat_rows(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("concat_rows", A);
  require_matrix("concat_rows", B);
  if (A.cols() != B.cols()) shape_error("concat_rows", A, B);
  Tensor y(A.rows() + B.rows(), A.cols());
  std::copy(A.data.begin(), A.data.end(), y.data.begin());
  std::copy(B.data.begin(), B.data.end(),
            y.data.begin() + static_cast<std::ptrdiff_t>(A.size()));
  const std::size_t ia = a.id, ib = b.id, na = A.size();
  return t.push(std::move(y), {ia, ib}, [ia, ib, na](Tape& tp, std::size_t self) {
    const Tensor* g = tp.adjoint_if_any(self);
    if (!g) return;
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.adjoint(ia);
      for (std::size_t i = 0; i < na; ++i) ga.data[i] += g->data[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.adjoint(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += g->data[na + i];
    }
  });
}

Var stop_gradient(Var a) { return tape_of(a).constant(a.value()); }

}  // namespace aqcl::nd
