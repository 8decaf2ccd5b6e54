#pragma once

#include <span>
#include <vector>

#include "sgec/autodiff.hpp"
#include "sgec/core.hpp"

// Optimal-transport distances between subgraphs.
//
// Every distance is differentiated by the envelope rule: the optimal plan is
// solved numerically and then held constant, and only the cost side of
// <plan, cost> carries gradient.
namespace sgec::ot {

struct SinkhornOptions {
  double eps = 0.05;
  int max_iter = 500;
  double tol = 1e-6;
  // Record the (minimization-form) entropic dual objective after each iteration.
  bool track_dual = false;
};

struct TransportPlan {
  Matrix coupling;
  Vector u;
  Vector v;
  double transport_cost = 0.0;  // <coupling, cost>, entropy excluded
  double marginal_error = 0.0;  // max absolute row/column marginal violation
  int iterations = 0;
  bool converged = false;
  std::vector<double> dual_history;
};

// Entries exp(-cos(xa_p, xb_q) / tau). A zero-norm row has cosine 0 with
// everything (cost 1).
struct CostMatrix {
  ad::Tensor values;
  double tau = 1.0;
};

CostMatrix cost_matrix(const ad::Tensor& xa, const ad::Tensor& xb, double tau);

// Entropic OT by Sinkhorn scaling in the log-stabilized form: dual potentials
// are kept in the log domain and absorbed whenever the scaling vectors grow
// large, so the kernel never overflows.
TransportPlan sinkhorn(const Matrix& cost, const Vector& u, const Vector& v,
                       const SinkhornOptions& opts = {});
TransportPlan sinkhorn(const CostMatrix& cost, const Vector& u, const Vector& v,
                       const SinkhornOptions& opts = {});

Vector uniform_marginal(Index n);

// <plan, cost> with the plan frozen.
ad::Tensor transport_cost(const ad::Tensor& cost, const Matrix& plan);

// W(xa, xb) under uniform marginals.
ad::Tensor wasserstein(const ad::Tensor& xa, const ad::Tensor& xb, double tau,
                       const SinkhornOptions& opts = {});

struct GwOptions {
  SinkhornOptions sinkhorn{};
  int outer_iter = 20;
  double tol = 1e-6;
  // Relative size, in [0, 0.25), of the deterministic perturbation applied to
  // the product coupling before the first linearization.
  double init_perturbation = 0.05;
  // Independent starts of the fixed-point iteration; the lowest value wins.
  int restarts = 4;
  // Proximal (KL-to-previous-plan) updates instead of plain entropic ones.
  bool proximal = true;
  // For equal sizes, round each start's plan to a matching, improve it by
  // pairwise swaps, and keep it when it beats the entropic plan.
  bool polish = true;
};

struct GwResult {
  Matrix plan;
  double value = 0.0;
  int outer_iterations = 0;
};

// L(T)_{pq} = sum_{p', q'} |da_{pp'} - db_{qq'}| T_{p'q'}.
Matrix gw_linearized_cost(const Matrix& da, const Matrix& db, const Matrix& plan);
// sum_{p,p',q,q'} T_pq T_p'q' |da_{pp'} - db_{qq'}|.
double gw_objective(const Matrix& da, const Matrix& db, const Matrix& plan);

// Entropic Gromov-Wasserstein by iterated linearization with uniform marginals.
GwResult solve_gromov_wasserstein(const Matrix& da, const Matrix& db, const GwOptions& opts = {});

// Frozen-plan GW objective, differentiable in da and db.
ad::Tensor gw_frozen_objective(const ad::Tensor& da, const ad::Tensor& db, const Matrix& plan);

ad::Tensor gromov_wasserstein(const ad::Tensor& da, const ad::Tensor& db, const GwOptions& opts = {});

// Stores transport plans so a second evaluation of the same computation can
// reuse them. Used to evaluate the frozen-plan (envelope) objective at
// perturbed inputs.
class PlanCache {
 public:
  enum class Mode { kRecord, kReplay };

  explicit PlanCache(Mode mode = Mode::kRecord) : mode_(mode) {}

  Mode mode() const { return mode_; }
  void replay() {
    mode_ = Mode::kReplay;
    cursor_ = 0;
  }

  void push(std::vector<Matrix> plans) { calls_.push_back(std::move(plans)); }
  const std::vector<Matrix>& next();

 private:
  Mode mode_;
  std::vector<std::vector<Matrix>> calls_;
  std::size_t cursor_ = 0;
};

// Which (i, j) entries a pairwise distance call fills.
enum class PairSet {
  kAll,        // every (i, j), including the diagonal
  kSymmetric,  // lists are the same; i < j solved once and mirrored, diagonal 0
};

struct PairwiseOptions {
  int threads = 1;
  PlanCache* cache = nullptr;
};

// s x s matrix of W(a_i, b_j).
ad::Tensor pairwise_wasserstein(std::span<const ad::Tensor> a, std::span<const ad::Tensor> b,
                                PairSet pairs, double tau, const SinkhornOptions& opts,
                                const PairwiseOptions& run = {});

// s x s matrix of GW(da_i, db_j).
ad::Tensor pairwise_gromov_wasserstein(std::span<const ad::Tensor> da, std::span<const ad::Tensor> db,
                                       PairSet pairs, const GwOptions& opts,
                                       const PairwiseOptions& run = {});

// Brute-force references for equal sizes k <= 6 and uniform marginals.
// Wasserstein: minimum over permutation couplings of (1/k) sum_p C_{p, sigma(p)},
// which is the exact optimum. GW: minimum of the quartic objective over
// permutation couplings, an upper bound on the true GW optimum.
double exact_ot_oracle(const Matrix& cost);
double exact_ot_oracle(const Matrix& da, const Matrix& db);

}  // namespace sgec::ot
