#include "sgec/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include <fmt/format.h>

namespace sgec::ad {

namespace {

std::atomic<bool> g_check_finite{true};

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(fmt::format("{}: shape mismatch ({}x{}) vs ({}x{})", op, a.rows(), a.cols(),
                                 b.rows(), b.cols()));
  }
}

Tape* shared_tape(std::string_view op, auto begin, auto end) {
  Tape* tape = nullptr;
  for (auto it = begin; it != end; ++it) {
    const Tensor& t = *it;
    if (!t.defined()) throw std::invalid_argument(fmt::format("{}: undefined tensor", op));
    if (!t.tracked()) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw ShapeError(fmt::format("{}: inputs recorded on different tapes", op));
    }
    tape = t.tape();
  }
  return tape;
}

struct Deref {
  const Tensor* const* p;
  const Tensor& operator*() const { return **p; }
  Deref& operator++() {
    ++p;
    return *this;
  }
  bool operator!=(const Deref& o) const { return p != o.p; }
};

}  // namespace

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor(Matrix value) : node_(std::make_shared<Node>()) { node_->value = std::move(value); }

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw ShapeError(fmt::format("item() on a {}x{} tensor", rows(), cols()));
  }
  return value()(0, 0);
}

void Tensor::accumulate(const Matrix& g) const {
  if (tracked()) node_->accumulate(g);
}

Tensor Tape::variable(Matrix value) {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->value = std::move(value);
  t.node_->tracked = true;
  t.tape_ = this;
  nodes_.push_back(t.node_);
  return t;
}

Tensor Tape::param(const Matrix& m) {
  auto it = params_.find(&m);
  if (it != params_.end()) return it->second;
  Tensor t = variable(m);
  params_.emplace(&m, t);
  return t;
}

Matrix Tape::grad_of(const Matrix& m) const {
  auto it = params_.find(&m);
  if (it == params_.end()) return Matrix::Zero(m.rows(), m.cols());
  return it->second.grad();
}

Tensor Tape::record(Matrix value, BackwardFn backward) {
  Tensor t = variable(std::move(value));
  t.node_->backward = std::move(backward);
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked() || loss.tape() != this) {
    throw std::invalid_argument("backward: loss is not tracked on this tape");
  }
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError(fmt::format("backward: loss must be 1x1, got {}x{}", loss.rows(), loss.cols()));
  }
  if (backward_done_) throw std::logic_error("backward: tape already consumed");
  backward_done_ = true;

  loss.node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.backward && node.grad.size() != 0) node.backward(node.grad);
  }
}

Tensor make_result(std::string_view op, Matrix value, std::span<const Tensor> inputs,
                   BackwardFn backward) {
  Tape* tape = shared_tape(op, inputs.begin(), inputs.end());
  if (g_check_finite && !value.allFinite()) {
    throw NumericError(fmt::format("{}: non-finite value in forward result", op));
  }
  if (tape == nullptr) return Tensor(std::move(value));
  return tape->record(std::move(value), std::move(backward));
}

Tensor make_result(std::string_view op, Matrix value, std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward) {
  Tape* tape = shared_tape(op, Deref{inputs.begin()}, Deref{inputs.end()});
  if (g_check_finite && !value.allFinite()) {
    throw NumericError(fmt::format("{}: non-finite value in forward result", op));
  }
  if (tape == nullptr) return Tensor(std::move(value));
  return tape->record(std::move(value), std::move(backward));
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError(fmt::format("matmul: ({}x{}) * ({}x{})", a.rows(), a.cols(), b.rows(), b.cols()));
  }
  Matrix out = a.value() * b.value();
  return make_result("matmul", std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    if (a.tracked()) a.accumulate(g * b.value().transpose());
    if (b.tracked()) b.accumulate(a.value().transpose() * g);
  });
}

Tensor sparse_matmul(const SparseMatrix& s, const Tensor& a) {
  if (s.cols() != a.rows()) {
    throw ShapeError(
        fmt::format("sparse_matmul: ({}x{}) * ({}x{})", s.rows(), s.cols(), a.rows(), a.cols()));
  }
  Matrix out = s * a.value();
  // The sparse operand is captured by value; it is small relative to the dense side.
  return make_result("sparse_matmul", std::move(out), {&a},
                     [st = SparseMatrix(s.transpose()), a](const Matrix& g) {
                       a.accumulate(st * g);
                     });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return make_result("transpose", std::move(out), {&a},
                     [a](const Matrix& g) { a.accumulate(g.transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix out = a.value() + b.value();
  return make_result("add", std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    a.accumulate(g);
    b.accumulate(g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  return make_result("sub", std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    a.accumulate(g);
    if (b.tracked()) b.accumulate(-g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result("mul", std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    if (a.tracked()) a.accumulate(g.cwiseProduct(b.value()));
    if (b.tracked()) b.accumulate(g.cwiseProduct(a.value()));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  if ((b.value().array() == 0.0).any()) throw std::domain_error("div: division by zero");
  Matrix out = a.value().cwiseQuotient(b.value());
  return make_result("div", out, {&a, &b}, [a, b, out](const Matrix& g) {
    if (a.tracked()) a.accumulate(g.cwiseQuotient(b.value()));
    if (b.tracked()) b.accumulate(-g.cwiseProduct(out).cwiseQuotient(b.value()));
  });
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value() * s;
  return make_result("scale", std::move(out), {&a}, [a, s](const Matrix& g) { a.accumulate(g * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value().array() + s;
  return make_result("add_scalar", std::move(out), {&a}, [a](const Matrix& g) { a.accumulate(g); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp();
  return make_result("exp", out, {&a},
                     [a, out](const Matrix& g) { a.accumulate(g.cwiseProduct(out)); });
}

Tensor log(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) throw std::domain_error("log: non-positive argument");
  Matrix out = a.value().array().log();
  return make_result("log", std::move(out), {&a},
                     [a](const Matrix& g) { a.accumulate(g.cwiseQuotient(a.value())); });
}

Tensor abs(const Tensor& a) {
  Matrix out = a.value().cwiseAbs();
  return make_result("abs", std::move(out), {&a}, [a](const Matrix& g) {
    Matrix sign = a.value().unaryExpr([](double x) { return double((x > 0) - (x < 0)); });
    a.accumulate(g.cwiseProduct(sign));
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_result("relu", std::move(out), {&a}, [a](const Matrix& g) {
    Matrix mask = (a.value().array() > 0.0).cast<double>();
    a.accumulate(g.cwiseProduct(mask));
  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return make_result("leaky_relu", std::move(out), {&a}, [a, slope](const Matrix& g) {
    Matrix d = a.value().unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    a.accumulate(g.cwiseProduct(d));
  });
}

Tensor row_softmax(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    double m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).unaryExpr([](double v) { return std::exp(v); });
    out.row(r) /= out.row(r).sum();
  }
  return make_result("row_softmax", out, {&a}, [a, out](const Matrix& g) {
    Vector dot = g.cwiseProduct(out).rowwise().sum();
    Matrix d = out.cwiseProduct(g - dot.replicate(1, g.cols()));
    a.accumulate(d);
  });
}

Tensor sum_rows(const Tensor& a) {
  Matrix out = a.value().rowwise().sum();
  return make_result("sum_rows", std::move(out), {&a},
                     [a](const Matrix& g) { a.accumulate(g.replicate(1, a.cols())); });
}

Tensor sum_cols(const Tensor& a) {
  Matrix out = a.value().colwise().sum();
  return make_result("sum_cols", std::move(out), {&a},
                     [a](const Matrix& g) { a.accumulate(g.replicate(a.rows(), 1)); });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result("sum", std::move(out), {&a}, [a](const Matrix& g) {
    a.accumulate(Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Tensor& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Tensor> captured(parts.begin(), parts.end());
  return make_result("concat_cols", std::move(out), parts, [captured](const Matrix& g) {
    Index off = 0;
    for (const Tensor& p : captured) {
      if (p.tracked()) p.accumulate(g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= a.rows()) {
      throw ShapeError(fmt::format("gather_rows: index {} out of range [0, {})", rows[r], a.rows()));
    }
    out.row(static_cast<Index>(r)) = a.value().row(rows[r]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result("gather_rows", std::move(out), {&a}, [a, idx](const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) d.row(idx[r]) += g.row(static_cast<Index>(r));
    a.accumulate(d);
  });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const Index> rows, Index n_out) {
  if (static_cast<Index>(rows.size()) != a.rows()) {
    throw ShapeError("scatter_add_rows: one target index per input row required");
  }
  Matrix out = Matrix::Zero(n_out, a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n_out) {
      throw ShapeError(fmt::format("scatter_add_rows: index {} out of range [0, {})", rows[r], n_out));
    }
    out.row(rows[r]) += a.value().row(static_cast<Index>(r));
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result("scatter_add_rows", std::move(out), {&a}, [a, idx](const Matrix& g) {
    Matrix d(a.rows(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) d.row(static_cast<Index>(r)) = g.row(idx[r]);
    a.accumulate(d);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError(fmt::format("add_row: ({}x{}) + row ({}x{})", a.rows(), a.cols(), row.rows(),
                                 row.cols()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result("add_row", std::move(out), {&a, &row}, [a, row](const Matrix& g) {
    a.accumulate(g);
    if (row.tracked()) row.accumulate(g.colwise().sum());
  });
}

Tensor stop_gradient(const Tensor& a) { return Tensor(a.value()); }

// ---------------------------------------------------------------------------

double finite_diff_check(const MultiScalarFn& f, const std::vector<Matrix>& xs, double h) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> vars;
    for (const Matrix& x : xs) vars.push_back(tape.variable(x));
    Tensor out = f(tape, vars);
    if (out.rows() != 1 || out.cols() != 1) {
      throw ShapeError("finite_diff_check: f must return a 1x1 tensor");
    }
    tape.backward(out);
    for (const Tensor& v : vars) analytic.push_back(v.grad());
  }

  auto evaluate = [&](const std::vector<Matrix>& point) {
    Tape tape;
    std::vector<Tensor> consts;
    for (const Matrix& x : point) consts.emplace_back(x);
    return f(tape, consts).item();
  };

  double worst = 0.0;
  std::vector<Matrix> point = xs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (Index i = 0; i < xs[k].rows(); ++i) {
      for (Index j = 0; j < xs[k].cols(); ++j) {
        const double x0 = xs[k](i, j);
        point[k](i, j) = x0 + h;
        const double fp = evaluate(point);
        point[k](i, j) = x0 - h;
        const double fm = evaluate(point);
        point[k](i, j) = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[k](i, j);
        const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, std::abs(a - numeric) / denom);
      }
    }
  }
  return worst;
}

double finite_diff_check(const ScalarFn& f, const Matrix& x, double h) {
  return finite_diff_check(
      [&f](Tape& tape, std::span<const Tensor> xs) { return f(tape, xs[0]); },
      std::vector<Matrix>{x}, h);
}

}  // namespace sgec::ad
