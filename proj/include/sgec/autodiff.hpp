#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sgec/core.hpp"

// Dense reverse-mode automatic differentiation over 2-D double matrices.
//
// A Tape records every operation whose inputs include a tracked tensor, in
// creation order, so reverse iteration is a valid topological order. Tensors
// without a tape are constants: they flow forward but never receive gradients.
namespace sgec::ad {

class Tape;

using BackwardFn = std::function<void(const Matrix& grad_out)>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  BackwardFn backward;
  bool tracked = false;

  void accumulate(const Matrix& g);
};

class Tensor {
 public:
  Tensor() = default;
  // Wraps a value as an untracked constant.
  explicit Tensor(Matrix value);

  static Tensor scalar(double v);

  const Matrix& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool defined() const { return node_ != nullptr; }
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }

  // Gradient after Tape::backward; a zero matrix if nothing reached this tensor.
  Matrix grad() const;
  // Value of a 1x1 tensor.
  double item() const;

  // Adds `g` into this tensor's gradient; no-op for constants. Used by ops.
  void accumulate(const Matrix& g) const;

 private:
  friend class Tape;
  std::shared_ptr<Node> node_;
  Tape* tape_ = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A fresh tracked leaf.
  Tensor variable(Matrix value);

  // A tracked leaf bound to a persistent parameter matrix. Repeated calls with
  // the same matrix return the same tensor, so reuse accumulates gradients.
  Tensor param(const Matrix& m);
  // Gradient of a matrix previously bound with param(); zeros if unused.
  Matrix grad_of(const Matrix& m) const;

  // Records an operation result. `backward` receives d(loss)/d(result).
  Tensor record(Matrix value, BackwardFn backward);

  // Propagates d(loss)/d(.) to every tracked tensor. Allowed once per tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
  std::unordered_map<const Matrix*, Tensor> params_;
  bool backward_done_ = false;
};

// Builds an op result: records on the shared tape of the tracked inputs, or
// returns a constant when none is tracked. Throws ShapeError if tracked inputs
// live on different tapes, NumericError if `value` is not finite.
Tensor make_result(std::string_view op, Matrix value, std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward);
Tensor make_result(std::string_view op, Matrix value, std::span<const Tensor> inputs,
                   BackwardFn backward);

// NaN/Inf detection after every forward op; on by default.
void set_check_finite(bool enabled);
bool check_finite_enabled();

// ---------------------------------------------------------------------------
// Operation catalogue

Tensor matmul(const Tensor& a, const Tensor& b);
// Constant sparse matrix times a dense tensor.
Tensor sparse_matmul(const SparseMatrix& s, const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor row_softmax(const Tensor& a);
// Per-row sums (n x 1).
Tensor sum_rows(const Tensor& a);
// Per-column sums (1 x c).
Tensor sum_cols(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);
// out.row(rows[r]) += a.row(r) for an output with n_out rows.
Tensor scatter_add_rows(const Tensor& a, std::span<const Index> rows, Index n_out);
// Adds a 1 x c row vector to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
// Forwards the value, blocks gradient flow.
Tensor stop_gradient(const Tensor& a);

// ---------------------------------------------------------------------------
// Gradient checking

using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;
using MultiScalarFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

// Central-difference gradient of f at x compared against backward().
// Returns max |a - b| / max(1, |a|, |b|) over all entries. Nondifferentiable
// points (e.g. relu exactly at 0) are not excluded automatically; callers keep
// inputs away from kinks.
double finite_diff_check(const ScalarFn& f, const Matrix& x, double h = 1e-5);
double finite_diff_check(const MultiScalarFn& f, const std::vector<Matrix>& xs, double h = 1e-5);

}  // namespace sgec::ad
