#pragma once

#include <span>
#include <string>
#include <vector>

#include "sgec/autodiff.hpp"
#include "sgec/core.hpp"

namespace sgec {

// Local adjacency lists; entry v lists the neighbors of row v (self excluded).
using Neighborhoods = std::vector<std::vector<Index>>;

// How the log-variance head output is turned into a standard deviation.
//   kHalf    : sigma = exp(0.5 * logvar)   (head output read as log sigma^2)
//   kLiteral : sigma = exp(logvar)
enum class SigmaConvention { kHalf, kLiteral };

struct GcnLayer {
  Matrix weight;  // C_in x C_out
  bool relu = true;
};

struct SageLayer {
  Matrix weight;  // C_in x C_out
  Matrix bias;    // 1 x C_out
};

// Single-head graph attention. `attention` is [a_src | a_dst], 1 x 2*C_out,
// scoring e_uv = leaky_relu(a_src . W x_u + a_dst . W x_v) for target v.
struct GatLayer {
  Matrix weight;     // C_in x C_out
  Matrix attention;  // 1 x 2*C_out
  double slope = 0.2;
};

struct LinearLayer {
  Matrix weight;  // C_in x C_out
  Matrix bias;    // 1 x C_out
};

// Glorot/Xavier uniform initialization, U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Index rows, Index cols, Rng& rng);

GcnLayer make_gcn_layer(Index in, Index out, Rng& rng, bool relu = true);
SageLayer make_sage_layer(Index in, Index out, Rng& rng);
GatLayer make_gat_layer(Index in, Index out, Rng& rng);
LinearLayer make_linear_layer(Index in, Index out, Rng& rng);

// sigma(A_hat X W). X may be a dense tensor or a constant sparse matrix.
ad::Tensor gcn_forward(const ad::Tensor& weight, bool relu, const SparseMatrix& a_hat,
                       const ad::Tensor& x);
ad::Tensor gcn_forward(const ad::Tensor& weight, bool relu, const SparseMatrix& a_hat,
                       const SparseMatrix& x);
ad::Tensor gcn_forward(ad::Tape& tape, const GcnLayer& layer, const SparseMatrix& a_hat,
                       const ad::Tensor& x);

// Row-normalized closed-neighborhood averaging matrix: row v holds
// 1/(|N(v)|+1) on {v} U N(v).
Matrix mean_aggregation_matrix(const Neighborhoods& nbrs, Index n);

// relu(MEAN(x_v, {x_u : u in N(v)}) W + b) per node.
ad::Tensor sage_forward(const ad::Tensor& weight, const ad::Tensor& bias, const Neighborhoods& nbrs,
                        const ad::Tensor& x);
ad::Tensor sage_forward(ad::Tape& tape, const SageLayer& layer, const Neighborhoods& nbrs,
                        const ad::Tensor& x);

struct GatOutput {
  ad::Tensor out;        // k x C_out, no output nonlinearity
  ad::Tensor attention;  // k x k; row v is the distribution over sources u
};

GatOutput gat_forward_detailed(const ad::Tensor& weight, const ad::Tensor& attention, double slope,
                               const Neighborhoods& nbrs, const ad::Tensor& x);
ad::Tensor gat_forward(const ad::Tensor& weight, const ad::Tensor& attention, double slope,
                       const Neighborhoods& nbrs, const ad::Tensor& x);
ad::Tensor gat_forward(ad::Tape& tape, const GatLayer& layer, const Neighborhoods& nbrs,
                       const ad::Tensor& x);

ad::Tensor linear_forward(const ad::Tensor& weight, const ad::Tensor& bias, const ad::Tensor& x);
ad::Tensor linear_forward(ad::Tape& tape, const LinearLayer& layer, const ad::Tensor& x);

// mu + sigma(logvar) * noise; noise is a constant, so no gradient reaches it.
ad::Tensor gaussian_reparam(const ad::Tensor& mu, const ad::Tensor& logvar, const Matrix& noise,
                            SigmaConvention convention = SigmaConvention::kHalf);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// One bias-corrected Adam update of every parameter in place.
void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads,
               double lr);

}  // namespace sgec
