#pragma once

// Dense row-major float64 tensors and a small reverse-mode tape.
//
// The primitive set is closed: every model and loss in the library is built
// by composing the functions declared at the bottom of this header, and each
// of them is covered by the finite-difference gradient suite.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <deque>
#include <vector>

namespace aqcl::nd {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }
  // rank-1 tensors are treated as a single row
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const;

  std::span<double> row(std::size_t r) {
    return {data.data() + r * cols(), cols()};
  }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols(), cols()};
  }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const;
  std::string shape_str() const;

  bool operator==(const Tensor&) const = default;
};

Tensor zeros_like(const Tensor& t);

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf that receives a gradient in backward().
  Var param(Tensor value);
  // A leaf that never receives a gradient.
  Var constant(Tensor value);

  // Appends a node produced by a primitive. `fn` is dropped when none of
  // `inputs` requires a gradient.
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Runs the reverse sweep from a 1x1 node. Previous adjoints are discarded,
  // so calling it twice yields identical gradients.
  void backward(Var loss);

  // Adjoint of a node after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;

  // Used by primitive backward functions: the adjoint buffer of `id`,
  // allocated as zeros on first touch.
  Tensor& adjoint(std::size_t id);
  const Tensor* adjoint_if_any(std::size_t id) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque keeps value() references stable across pushes
  std::vector<Tensor> adjoints_;
  std::vector<bool> touched_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
// a: N x d, bias: 1 x d
Var add_bias(Var a, Var bias);
// a: N x d, col: N x 1; multiplies each row of a by its scalar
Var mul_col(Var a, Var col);
Var leaky_relu(Var a, double slope);
// max(a, lo) elementwise; no gradient flows where the bound is active.
Var clamp_min(Var a, double lo);
// a + c elementwise for a constant c
Var add_scalar(Var a, double c);
Var sigmoid(Var a);
Var log(Var a);
Var exp(Var a);
// Row-wise x / (|x| + 1e-12).
Var l2_normalize(Var a);
// Row-wise dot product of two N x d inputs, N x 1 output.
Var row_dot(Var a, Var b);
Var row_sum(Var a);
Var sum(Var a);
Var mean(Var a);
Var softmax(Var a);
// Rows of `table` selected by index; gradient scatters back into the table.
Var gather_rows(Var table, std::vector<std::size_t> index);
// Segments are row ranges [offsets[i], offsets[i+1]); offsets.size() = n+1.
// Empty segments produce zero rows (sum/mean) and are skipped by softmax.
Var segment_sum(Var a, std::vector<std::size_t> offsets);
Var segment_mean(Var a, std::vector<std::size_t> offsets);
// a: N x 1 logits; softmax taken independently within each segment.
Var segment_softmax(Var a, std::vector<std::size_t> offsets);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(Var a, Var b);
Var stop_gradient(Var a);

}  // namespace aqcl::nd
