#include "sgec/layers.hpp"

#include <cmath>

#include <fmt/format.h>

namespace sgec {

using ad::Tensor;

Matrix glorot_uniform(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) w(i, j) = dist(rng);
  }
  return w;
}

GcnLayer make_gcn_layer(Index in, Index out, Rng& rng, bool relu) {
  return {glorot_uniform(in, out, rng), relu};
}

SageLayer make_sage_layer(Index in, Index out, Rng& rng) {
  return {glorot_uniform(in, out, rng), Matrix::Zero(1, out)};
}

GatLayer make_gat_layer(Index in, Index out, Rng& rng) {
  GatLayer layer;
  layer.weight = glorot_uniform(in, out, rng);
  layer.attention = glorot_uniform(1, 2 * out, rng);
  return layer;
}

LinearLayer make_linear_layer(Index in, Index out, Rng& rng) {
  return {glorot_uniform(in, out, rng), Matrix::Zero(1, out)};
}

// ---------------------------------------------------------------------------

Tensor gcn_forward(const Tensor& weight, bool relu, const SparseMatrix& a_hat, const Tensor& x) {
  if (a_hat.rows() != a_hat.cols() || a_hat.cols() != x.rows()) {
    throw ShapeError(fmt::format("gcn_forward: adjacency {}x{} vs features {}x{}", a_hat.rows(),
                                 a_hat.cols(), x.rows(), x.cols()));
  }
  Tensor h = ad::sparse_matmul(a_hat, ad::matmul(x, weight));
  return relu ? ad::relu(h) : h;
}

Tensor gcn_forward(const Tensor& weight, bool relu, const SparseMatrix& a_hat, const SparseMatrix& x) {
  if (a_hat.rows() != a_hat.cols() || a_hat.cols() != x.rows()) {
    throw ShapeError(fmt::format("gcn_forward: adjacency {}x{} vs features {}x{}", a_hat.rows(),
                                 a_hat.cols(), x.rows(), x.cols()));
  }
  Tensor h = ad::sparse_matmul(a_hat, ad::sparse_matmul(x, weight));
  return relu ? ad::relu(h) : h;
}

Tensor gcn_forward(ad::Tape& tape, const GcnLayer& layer, const SparseMatrix& a_hat, const Tensor& x) {
  return gcn_forward(tape.param(layer.weight), layer.relu, a_hat, x);
}

Matrix mean_aggregation_matrix(const Neighborhoods& nbrs, Index n) {
  if (static_cast<Index>(nbrs.size()) != n) {
    throw ShapeError(fmt::format("neighborhoods list {} nodes, features have {}", nbrs.size(), n));
  }
  Matrix m = Matrix::Zero(n, n);
  for (Index v = 0; v < n; ++v) {
    const double w = 1.0 / static_cast<double>(nbrs[v].size() + 1);
    m(v, v) += w;
    for (Index u : nbrs[v]) {
      if (u < 0 || u >= n) {
        throw std::out_of_range(fmt::format("neighbor index {} of node {} out of range", u, v));
      }
      m(v, u) += w;
    }
  }
  return m;
}

Tensor sage_forward(const Tensor& weight, const Tensor& bias, const Neighborhoods& nbrs,
                    const Tensor& x) {
  Tensor mean = ad::matmul(Tensor(mean_aggregation_matrix(nbrs, x.rows())), x);
  return ad::relu(ad::add_row(ad::matmul(mean, weight), bias));
}

Tensor sage_forward(ad::Tape& tape, const SageLayer& layer, const Neighborhoods& nbrs, const Tensor& x) {
  return sage_forward(tape.param(layer.weight), tape.param(layer.bias), nbrs, x);
}

GatOutput gat_forward_detailed(const Tensor& weight, const Tensor& attention, double slope,
                               const Neighborhoods& nbrs, const Tensor& x) {
  const Index k = x.rows();
  const Index c_out = weight.cols();
  if (attention.rows() != 1 || attention.cols() != 2 * c_out) {
    throw ShapeError(fmt::format("gat_forward: attention must be 1x{}, got {}x{}", 2 * c_out,
                                 attention.rows(), attention.cols()));
  }
  if (static_cast<Index>(nbrs.size()) != k) {
    throw ShapeError(fmt::format("gat_forward: {} neighborhoods for {} nodes", nbrs.size(), k));
  }

  // Additive mask: 0 on the closed neighborhood, effectively -inf elsewhere.
  constexpr double kMasked = -1e30;
  Matrix bias = Matrix::Constant(k, k, kMasked);
  for (Index v = 0; v < k; ++v) {
    bias(v, v) = 0.0;
    for (Index u : nbrs[v]) {
      if (u < 0 || u >= k) {
        throw std::out_of_range(fmt::format("neighbor index {} of node {} out of range", u, v));
      }
      bias(v, u) = 0.0;
    }
  }

  std::vector<Index> src_half(static_cast<std::size_t>(c_out));
  std::vector<Index> dst_half(static_cast<std::size_t>(c_out));
  for (Index c = 0; c < c_out; ++c) {
    src_half[c] = c;
    dst_half[c] = c_out + c;
  }

  Tensor z = ad::matmul(x, weight);
  Tensor att_t = ad::transpose(attention);
  Tensor s_src = ad::matmul(z, ad::gather_rows(att_t, src_half));  // k x 1
  Tensor s_dst = ad::matmul(z, ad::gather_rows(att_t, dst_half));  // k x 1
  Tensor ones_col(Matrix::Ones(k, 1));
  Tensor ones_row(Matrix::Ones(1, k));
  // scores(v, u) = s_src[u] + s_dst[v]
  Tensor scores = ad::add(ad::matmul(ones_col, ad::transpose(s_src)), ad::matmul(s_dst, ones_row));
  Tensor alpha = ad::row_softmax(ad::add(ad::leaky_relu(scores, slope), Tensor(std::move(bias))));
  return {ad::matmul(alpha, z), alpha};
}

Tensor gat_forward(const Tensor& weight, const Tensor& attention, double slope,
                   const Neighborhoods& nbrs, const Tensor& x) {
  return gat_forward_detailed(weight, attention, slope, nbrs, x).out;
}

Tensor gat_forward(ad::Tape& tape, const GatLayer& layer, const Neighborhoods& nbrs, const Tensor& x) {
  return gat_forward(tape.param(layer.weight), tape.param(layer.attention), layer.slope, nbrs, x);
}

Tensor linear_forward(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  return ad::add_row(ad::matmul(x, weight), bias);
}

Tensor linear_forward(ad::Tape& tape, const LinearLayer& layer, const Tensor& x) {
  return linear_forward(tape.param(layer.weight), tape.param(layer.bias), x);
}

Tensor gaussian_reparam(const Tensor& mu, const Tensor& logvar, const Matrix& noise,
                        SigmaConvention convention) {
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || noise.rows() != mu.rows() ||
      noise.cols() != mu.cols()) {
    throw ShapeError(fmt::format("gaussian_reparam: mu {}x{}, logvar {}x{}, noise {}x{}", mu.rows(),
                                 mu.cols(), logvar.rows(), logvar.cols(), noise.rows(), noise.cols()));
  }
  const double c = convention == SigmaConvention::kHalf ? 0.5 : 1.0;
  Tensor sigma = ad::exp(ad::scale(logvar, c));
  return ad::add(mu, ad::mul(sigma, Tensor(noise)));
}

void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads,
               double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  }
  if (state.m.empty()) {
    for (Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols()) {
      throw ShapeError(fmt::format("adam_step: gradient {} is {}x{}, parameter is {}x{}", i,
                                   grads[i].rows(), grads[i].cols(), params[i]->rows(),
                                   params[i]->cols()));
    }
    if (!grads[i].allFinite()) {
      throw NumericError(fmt::format("adam_step: non-finite gradient for parameter {} at step {}", i,
                                     state.step + 1));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i].cwiseAbs2();
    auto m_hat = state.m[i].array() / bc1;
    auto v_hat = state.v[i].array() / bc2;
    params[i]->array() -= lr * m_hat / (v_hat.sqrt() + state.eps);
  }
}

}  // namespace sgec
