#include "sgec/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <numeric>

#include <fmt/format.h>

#include "cosine.hpp"
#include "sgec/parallel.hpp"

namespace sgec::ot {

using ad::Tensor;

namespace {

std::vector<Index> identity_perm(Index k) {
  std::vector<Index> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  return perm;
}

// Plan entries at or below this mass are treated as zero in the quartic sums;
// their total contribution is below 1e-13 of any GW value.
constexpr double kNegligibleMass = 1e-16;

// Lower clamp before taking log of a plan entry.
constexpr double kPlanFloor = 1e-300;

// Absorb scaling vectors into the log potentials beyond this magnitude.
constexpr double kAbsorbThreshold = 50.0;

// Sinkhorn sweeps before unconverged solves switch to Newton steps on the dual.
constexpr int kNewtonAfter = 100;
constexpr int kMaxLineSearch = 30;
constexpr double kNewtonDamping[] = {1e-12, 1e-9, 1e-6, 1e-3};
constexpr double kArmijo = 1e-4;

void check_marginal(const Vector& m, const char* name) {
  if (m.size() == 0) throw ShapeError(fmt::format("sinkhorn: empty marginal {}", name));
  if ((m.array() <= 0.0).any() || !m.allFinite()) {
    throw std::invalid_argument(fmt::format("sinkhorn: marginal {} must be strictly positive", name));
  }
  if (std::abs(m.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument(fmt::format("sinkhorn: marginal {} sums to {}, expected 1", name, m.sum()));
  }
}

Matrix stabilized_kernel(const Matrix& cost, const Vector& f, const Vector& g, double eps) {
  Matrix k(cost.rows(), cost.cols());
  for (Index p = 0; p < cost.rows(); ++p) {
    for (Index q = 0; q < cost.cols(); ++q) k(p, q) = std::exp(-(cost(p, q) - f[p] - g[q]) / eps);
  }
  return k;
}

// Entropic dual in maximization form for full potentials f, g; `plan` receives the primal coupling.
double entropic_dual(const Matrix& cost, const Vector& f, const Vector& g, const Vector& u, const Vector& v,
                     double eps, Matrix& plan) {
  plan = stabilized_kernel(cost, f, g, eps);
  return f.dot(u) + g.dot(v) - eps * plan.sum();
}

// One damped Newton ascent step on the entropic dual. The last column
// potential is pinned to remove the shift invariance. Returns false when no
// ascent step is found.
bool newton_step(const Matrix& cost, const Vector& u, const Vector& v, double eps, Vector& f, Vector& g) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  Matrix plan;
  const double d0 = entropic_dual(cost, f, g, u, v, eps, plan);
  Vector grad(n + m - 1);
  grad.head(n) = u - plan.rowwise().sum();
  grad.tail(m - 1) = (v - plan.colwise().sum().transpose()).head(m - 1);

  Matrix h = Matrix::Zero(n + m - 1, n + m - 1);
  h.topLeftCorner(n, n).diagonal() = plan.rowwise().sum();
  h.bottomRightCorner(m - 1, m - 1).diagonal() = plan.colwise().sum().transpose().head(m - 1);
  h.topRightCorner(n, m - 1) = plan.leftCols(m - 1);
  h.bottomLeftCorner(m - 1, n) = plan.leftCols(m - 1).transpose();
  // Near a permutation plan the Hessian is close to singular in k - 1
  // directions; increasing diagonal damping keeps the step well defined.
  const double scale = h.diagonal().maxCoeff();
  for (double damping : kNewtonDamping) {
    Matrix hd = h;
    hd.diagonal().array() += damping * scale;
    const Eigen::LLT<Matrix> llt(hd);
    if (llt.info() != Eigen::Success) continue;
    const Vector dir = eps * llt.solve(grad);
    const double slope = grad.dot(dir);
    if (!dir.allFinite() || !(slope > 0.0)) continue;
    for (int ls = 0; ls < kMaxLineSearch; ++ls) {
      const double step = std::ldexp(1.0, -ls);
      Vector fn = f + step * dir.head(n);
      Vector gn = g;
      gn.head(m - 1) += step * dir.tail(m - 1);
      const double d1 = entropic_dual(cost, fn, gn, u, v, eps, plan);
      if (std::isfinite(d1) && d1 >= d0 + kArmijo * step * slope) {
        f = std::move(fn);
        g = std::move(gn);
        return true;
      }
    }
  }
  return false;
}

Matrix cosine_cost(const Matrix& ua, const Matrix& ub, double tau) {
  return (-(ua * ub.transpose()) / tau).array().exp().matrix();
}

}  // namespace

Vector uniform_marginal(Index n) {
  if (n < 1) throw ShapeError("uniform_marginal: n must be >= 1");
  return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

CostMatrix cost_matrix(const Tensor& xa, const Tensor& xb, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("cost_matrix: tau must be positive");
  if (xa.cols() != xb.cols()) {
    throw ShapeError(fmt::format("cost_matrix: feature widths {} and {} differ", xa.cols(), xb.cols()));
  }
  RowNormalized na = normalize_rows(xa.value());
  RowNormalized nb = normalize_rows(xb.value());
  Matrix c = cosine_cost(na.unit, nb.unit, tau);
  Matrix c_saved = c;
  auto backward = [xa, xb, na, nb, c = std::move(c_saved), tau](const Matrix& g) {
    const Matrix d_cos = (g.array() * c.array()).matrix() * (-1.0 / tau);
    if (xa.tracked()) xa.accumulate(normalize_rows_backward(d_cos * nb.unit, na));
    if (xb.tracked()) xb.accumulate(normalize_rows_backward(d_cos.transpose() * na.unit, nb));
  };
  return {ad::make_result("cost_matrix", std::move(c), {&xa, &xb}, std::move(backward)), tau};
}

TransportPlan sinkhorn(const Matrix& cost, const Vector& u, const Vector& v, const SinkhornOptions& opts) {
  if (cost.rows() != u.size() || cost.cols() != v.size()) {
    throw ShapeError(fmt::format("sinkhorn: cost {}x{} with marginals of size {} and {}", cost.rows(),
                                 cost.cols(), u.size(), v.size()));
  }
  if (!cost.allFinite()) throw NumericError("sinkhorn: non-finite cost");
  if (!(opts.eps > 0.0)) throw std::invalid_argument("sinkhorn: eps must be positive");
  if (opts.max_iter < 1) throw std::invalid_argument("sinkhorn: max_iter must be >= 1");
  check_marginal(u, "u");
  check_marginal(v, "v");

  const double eps = opts.eps;
  Vector f = cost.rowwise().minCoeff();
  Vector g(cost.cols());
  for (Index q = 0; q < cost.cols(); ++q) g[q] = (cost.col(q) - f).minCoeff();
  Vector a = Vector::Ones(cost.rows());
  Vector b = Vector::Ones(cost.cols());
  Matrix k = stabilized_kernel(cost, f, g, eps);
  auto absorb = [&] {
    f += eps * a.array().log().matrix();
    g += eps * b.array().log().matrix();
    a.setOnes();
    b.setOnes();
    k = stabilized_kernel(cost, f, g, eps);
  };

  TransportPlan out;
  for (int it = 0; it < opts.max_iter; ++it) {
    bool swept = false;
    if (it >= kNewtonAfter && cost.cols() > 1) {
      absorb();
      swept = newton_step(cost, u, v, eps, f, g);
      if (swept) k = stabilized_kernel(cost, f, g, eps);
    }
    if (!swept) {
      Vector kb = k * b;
      if (!(kb.array() > 0.0).all()) throw NumericError("sinkhorn: kernel row underflow");
      a = u.cwiseQuotient(kb);
      Vector kta = k.transpose() * a;
      if (!(kta.array() > 0.0).all()) throw NumericError("sinkhorn: kernel column underflow");
      b = v.cwiseQuotient(kta);
      if (a.array().log().abs().maxCoeff() > kAbsorbThreshold || b.array().log().abs().maxCoeff() > kAbsorbThreshold) {
        absorb();
      }
    }
    ++out.iterations;

    const Matrix plan = a.asDiagonal() * k * b.asDiagonal();
    if (opts.track_dual) {
      const Vector big_f = f + eps * a.array().log().matrix();
      const Vector big_g = g + eps * b.array().log().matrix();
      out.dual_history.push_back(-(big_f.dot(u) + big_g.dot(v) - eps * plan.sum()));
    }
    const double err = std::max((plan.rowwise().sum() - u).cwiseAbs().maxCoeff(),
                                (plan.colwise().sum().transpose() - v).cwiseAbs().maxCoeff());
    if (err < opts.tol) {
      out.converged = true;
      break;
    }
  }
  out.coupling = a.asDiagonal() * k * b.asDiagonal();

  if (!out.coupling.allFinite()) throw NumericError("sinkhorn: non-finite coupling");
  out.u = u;
  out.v = v;
  out.transport_cost = (out.coupling.array() * cost.array()).sum();
  out.marginal_error = std::max((out.coupling.rowwise().sum() - u).cwiseAbs().maxCoeff(),
                                (out.coupling.colwise().sum().transpose() - v).cwiseAbs().maxCoeff());
  return out;
}

TransportPlan sinkhorn(const CostMatrix& cost, const Vector& u, const Vector& v, const SinkhornOptions& opts) {
  return sinkhorn(cost.values.value(), u, v, opts);
}

Tensor transport_cost(const Tensor& cost, const Matrix& plan) {
  if (cost.rows() != plan.rows() || cost.cols() != plan.cols()) {
    throw ShapeError(fmt::format("transport_cost: cost {}x{} vs plan {}x{}", cost.rows(), cost.cols(),
                                 plan.rows(), plan.cols()));
  }
  Matrix value(1, 1);
  value(0, 0) = (cost.value().array() * plan.array()).sum();
  return ad::make_result("transport_cost", std::move(value), {&cost},
                         [cost, plan](const Matrix& g) { cost.accumulate(g(0, 0) * plan); });
}

Tensor wasserstein(const Tensor& xa, const Tensor& xb, double tau, const SinkhornOptions& opts) {
  CostMatrix c = cost_matrix(xa, xb, tau);
  TransportPlan plan = sinkhorn(c, uniform_marginal(xa.rows()), uniform_marginal(xb.rows()), opts);
  return transport_cost(c.values, plan.coupling);
}

// ---------------------------------------------------------------------------
// Gromov-Wasserstein

namespace {

void check_square(const Matrix& d, const char* name) {
  if (d.rows() != d.cols() || d.rows() == 0) {
    throw ShapeError(fmt::format("gromov_wasserstein: {} must be square and non-empty, got {}x{}", name,
                                 d.rows(), d.cols()));
  }
}

// Sign pattern summed against the frozen plan:
// out_a(p, p') = sum_{q, q'} T_pq T_p'q' sign(da_pp' - db_qq'), out_b the negated
// transpose-pattern for db.
void gw_gradients(const Matrix& da, const Matrix& db, const Matrix& t, Matrix* out_a, Matrix* out_b) {
  const Index ka = da.rows();
  const Index kb = db.rows();
  if (out_a) *out_a = Matrix::Zero(ka, ka);
  if (out_b) *out_b = Matrix::Zero(kb, kb);
  for (Index p = 0; p < ka; ++p) {
    for (Index pp = 0; pp < ka; ++pp) {
      const double x = da(p, pp);
      for (Index q = 0; q < kb; ++q) {
        const double tpq = t(p, q);
        if (tpq <= kNegligibleMass) continue;
        for (Index qq = 0; qq < kb; ++qq) {
          const double diff = x - db(q, qq);
          if (diff == 0.0) continue;
          const double w = tpq * t(pp, qq) * (diff > 0.0 ? 1.0 : -1.0);
          if (out_a) (*out_a)(p, pp) += w;
          if (out_b) (*out_b)(q, qq) -= w;
        }
      }
    }
  }
}

// Product coupling plus delta / (ka * kb) times a double-centered fixed
// irregular pattern h, so both marginals stay exact. Entries stay positive for
// delta < 0.25 since |h - row mean - col mean + mean| <= 4.
Matrix perturbed_product(Index ka, Index kb, double delta) {
  Matrix h(ka, kb);
  for (Index p = 0; p < ka; ++p) {
    for (Index q = 0; q < kb; ++q) {
      h(p, q) = std::sin(1.618 * static_cast<double>(p + 1) * static_cast<double>(q + 2) + 0.7 * static_cast<double>(p));
    }
  }
  const Vector row_mean = h.rowwise().mean();
  const Eigen::RowVectorXd col_mean = h.colwise().mean();
  const double mean = h.mean();
  h.colwise() -= row_mean;
  h.rowwise() -= col_mean;
  h.array() += mean;
  return (Matrix::Ones(ka, kb) + delta * h) / static_cast<double>(ka * kb);
}

}  // namespace

Matrix gw_linearized_cost(const Matrix& da, const Matrix& db, const Matrix& plan) {
  check_square(da, "da");
  check_square(db, "db");
  const Index ka = da.rows();
  const Index kb = db.rows();
  if (plan.rows() != ka || plan.cols() != kb) {
    throw ShapeError(fmt::format("gw_linearized_cost: plan {}x{} for sizes {} and {}", plan.rows(),
                                 plan.cols(), ka, kb));
  }
  // Column q' of db^T holds db(q, q') for all q, contiguous.
  const Matrix db_t = db.transpose();
  Matrix l = Matrix::Zero(ka, kb);
  for (Index pp = 0; pp < ka; ++pp) {
    for (Index qq = 0; qq < kb; ++qq) {
      const double t = plan(pp, qq);
      if (t <= kNegligibleMass) continue;
      const auto col = db_t.row(qq).array();
      for (Index p = 0; p < ka; ++p) l.row(p).array() += t * (da(p, pp) - col).abs();
    }
  }
  return l;
}

double gw_objective(const Matrix& da, const Matrix& db, const Matrix& plan) {
  return (gw_linearized_cost(da, db, plan).array() * plan.array()).sum();
}

namespace {

// Monotone (north-west corner) coupling between two rank orders.
Matrix monotone_coupling(const std::vector<Index>& oa, const std::vector<Index>& ob) {
  const Index ka = static_cast<Index>(oa.size());
  const Index kb = static_cast<Index>(ob.size());
  Matrix t = Matrix::Zero(ka, kb);
  Vector ra = uniform_marginal(ka);
  Vector rb = uniform_marginal(kb);
  Index i = 0;
  Index j = 0;
  while (i < ka && j < kb) {
    const double m = std::min(ra[i], rb[j]);
    t(oa[i], ob[j]) += m;
    ra[i] -= m;
    rb[j] -= m;
    if (ra[i] <= 1e-15) ++i;
    if (rb[j] <= 1e-15) ++j;
  }
  return t;
}

std::vector<Index> rank_order(const Vector& key) {
  std::vector<Index> order = identity_perm(key.size());
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return key[x] < key[y]; });
  return order;
}

// Initial coupling for start `r`. Start 0 is the perturbed product coupling;
// starts 1-3 pair nodes by rank of a per-node distance statistic (mean, max,
// mean against reversed mean); later starts blend a pseudo-random matching
// with the product coupling.
Matrix initial_coupling(const Matrix& da, const Matrix& db, int r, double delta) {
  const Index ka = da.rows();
  const Index kb = db.rows();
  switch (r) {
    case 0:
      return perturbed_product(ka, kb, delta);
    case 1:
      return monotone_coupling(rank_order(da.rowwise().mean()), rank_order(db.rowwise().mean()));
    case 2:
      return monotone_coupling(rank_order(da.rowwise().maxCoeff()), rank_order(db.rowwise().maxCoeff()));
    case 3: {
      std::vector<Index> ob = rank_order(db.rowwise().mean());
      std::reverse(ob.begin(), ob.end());
      return monotone_coupling(rank_order(da.rowwise().mean()), ob);
    }
    default: {
      // Random rank orders from a fixed per-start seed, blended with the product coupling.
      Rng rng(mix_seed(static_cast<std::uint64_t>(r)));
      std::vector<Index> oa = identity_perm(ka);
      std::vector<Index> ob = identity_perm(kb);
      std::shuffle(ob.begin(), ob.end(), rng);
      return 0.5 * monotone_coupling(oa, ob) + 0.5 * perturbed_product(ka, kb, delta);
    }
  }
}

}  // namespace

namespace {

double permutation_gw(const Matrix& da, const Matrix& db, const std::vector<Index>& sigma) {
  const Index k = da.rows();
  double total = 0.0;
  for (Index p = 0; p < k; ++p) {
    for (Index pp = 0; pp < k; ++pp) total += std::abs(da(p, pp) - db(sigma[p], sigma[pp]));
  }
  return total / static_cast<double>(k * k);
}

// Greedy rounding of a square coupling to a matching, then pairwise-swap
// descent on the quartic objective until no swap improves it.
std::vector<Index> polish_matching(const Matrix& da, const Matrix& db, const Matrix& plan, double* value) {
  const Index k = plan.rows();
  std::vector<std::pair<Index, Index>> cells;
  for (Index p = 0; p < k; ++p) {
    for (Index q = 0; q < k; ++q) cells.emplace_back(p, q);
  }
  std::stable_sort(cells.begin(), cells.end(), [&](const auto& x, const auto& y) {
    return plan(x.first, x.second) > plan(y.first, y.second);
  });
  std::vector<Index> sigma(static_cast<std::size_t>(k), -1);
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  for (auto [p, q] : cells) {
    if (sigma[p] < 0 && !used[q]) {
      sigma[p] = q;
      used[q] = true;
    }
  }
  double best = permutation_gw(da, db, sigma);
  for (bool improved = true; improved;) {
    improved = false;
    for (Index x = 0; x < k; ++x) {
      for (Index y = x + 1; y < k; ++y) {
        std::swap(sigma[x], sigma[y]);
        const double v = permutation_gw(da, db, sigma);
        if (v < best - 1e-12) {
          best = v;
          improved = true;
        } else {
          std::swap(sigma[x], sigma[y]);
        }
      }
    }
  }
  *value = best;
  return sigma;
}

}  // namespace

GwResult solve_gromov_wasserstein(const Matrix& da, const Matrix& db, const GwOptions& opts) {
  check_square(da, "da");
  check_square(db, "db");
  if (!da.allFinite() || !db.allFinite()) throw NumericError("gromov_wasserstein: non-finite structure matrix");
  if (opts.outer_iter < 1) throw std::invalid_argument("gromov_wasserstein: outer_iter must be >= 1");
  if (opts.restarts < 1) throw std::invalid_argument("gromov_wasserstein: restarts must be >= 1");
  if (!(opts.init_perturbation >= 0.0 && opts.init_perturbation < 0.25)) {
    throw std::invalid_argument("gromov_wasserstein: init_perturbation must lie in [0, 0.25)");
  }
  const Vector u = uniform_marginal(da.rows());
  const Vector v = uniform_marginal(db.rows());

  GwResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    GwResult cur;
    cur.plan = initial_coupling(da, db, r, opts.init_perturbation);
    for (int it = 0; it < opts.outer_iter; ++it) {
      Matrix cost = gw_linearized_cost(da, db, cur.plan);
      if (opts.proximal) {
        cost -= opts.sinkhorn.eps * cur.plan.cwiseMax(kPlanFloor).array().log().matrix();
      }
      Matrix next = sinkhorn(cost, u, v, opts.sinkhorn).coupling;
      const double change = (next - cur.plan).cwiseAbs().maxCoeff();
      cur.plan = std::move(next);
      cur.outer_iterations = it + 1;
      if (change < opts.tol) break;
    }
    cur.value = gw_objective(da, db, cur.plan);
    if (opts.polish && da.rows() == db.rows()) {
      double v = 0.0;
      const std::vector<Index> sigma = polish_matching(da, db, cur.plan, &v);
      if (v < cur.value) {
        const double mass = 1.0 / static_cast<double>(da.rows());
        cur.plan.setZero();
        for (Index p = 0; p < da.rows(); ++p) cur.plan(p, sigma[p]) = mass;
        cur.value = gw_objective(da, db, cur.plan);
      }
    }
    // Strict improvement only, so ties keep the earliest start.
    if (cur.value < best.value) best = std::move(cur);
  }
  return best;
}

Tensor gw_frozen_objective(const Tensor& da, const Tensor& db, const Matrix& plan) {
  Matrix value(1, 1);
  value(0, 0) = gw_objective(da.value(), db.value(), plan);
  auto backward = [da, db, plan](const Matrix& g) {
    Matrix ga;
    Matrix gb;
    gw_gradients(da.value(), db.value(), plan, da.tracked() ? &ga : nullptr, db.tracked() ? &gb : nullptr);
    if (da.tracked()) da.accumulate(g(0, 0) * ga);
    if (db.tracked()) db.accumulate(g(0, 0) * gb);
  };
  return ad::make_result("gw_objective", std::move(value), {&da, &db}, std::move(backward));
}

Tensor gromov_wasserstein(const Tensor& da, const Tensor& db, const GwOptions& opts) {
  GwResult r = solve_gromov_wasserstein(da.value(), db.value(), opts);
  return gw_frozen_objective(da, db, r.plan);
}

// ---------------------------------------------------------------------------
// Pairwise evaluation

const std::vector<Matrix>& PlanCache::next() {
  if (mode_ != Mode::kReplay) throw std::logic_error("PlanCache: next() outside replay mode");
  if (cursor_ >= calls_.size()) throw std::logic_error("PlanCache: no recorded plans left to replay");
  return calls_[cursor_++];
}

namespace {

struct PairIndex {
  Index i;
  Index j;
};

std::vector<PairIndex> enumerate_pairs(std::size_t na, std::size_t nb, PairSet pairs) {
  std::vector<PairIndex> out;
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = pairs == PairSet::kSymmetric ? i + 1 : 0; j < nb; ++j) {
      out.push_back({static_cast<Index>(i), static_cast<Index>(j)});
    }
  }
  return out;
}

// Symmetric mode reads only `a`; the returned span is what plays the role of b.
std::span<const Tensor> resolve_b(std::span<const Tensor> a, std::span<const Tensor> b, PairSet pairs,
                                  const char* op) {
  if (a.empty()) throw ShapeError(fmt::format("{}: empty input list", op));
  if (pairs == PairSet::kSymmetric) {
    if (!b.empty() && b.size() != a.size()) {
      throw ShapeError(fmt::format("{}: symmetric mode needs equal list sizes", op));
    }
    return a;
  }
  if (b.empty()) throw ShapeError(fmt::format("{}: empty input list", op));
  return b;
}

// Solves (or replays) one plan per pair.
std::vector<Matrix> plans_for(const std::vector<PairIndex>& pairs, const PairwiseOptions& run,
                              const std::function<Matrix(std::size_t)>& solve) {
  if (run.cache && run.cache->mode() == PlanCache::Mode::kReplay) {
    const std::vector<Matrix>& cached = run.cache->next();
    if (cached.size() != pairs.size()) throw std::logic_error("PlanCache: replayed call has a different pair count");
    return cached;
  }
  std::vector<Matrix> plans(pairs.size());
  parallel_for(pairs.size(), run.threads, [&](std::size_t n) { plans[n] = solve(n); });
  if (run.cache) run.cache->push(plans);
  return plans;
}

std::vector<Tensor> concat_inputs(std::span<const Tensor> a, std::span<const Tensor> b, PairSet pairs) {
  std::vector<Tensor> all(a.begin(), a.end());
  if (pairs == PairSet::kAll) all.insert(all.end(), b.begin(), b.end());
  return all;
}

}  // namespace

Tensor pairwise_wasserstein(std::span<const Tensor> a, std::span<const Tensor> b_in, PairSet pairs,
                            double tau, const SinkhornOptions& opts, const PairwiseOptions& run) {
  if (!(tau > 0.0)) throw std::invalid_argument("pairwise_wasserstein: tau must be positive");
  std::span<const Tensor> b = resolve_b(a, b_in, pairs, "pairwise_wasserstein");
  const Index width = a.front().cols();
  for (const auto* list : {&a, &b}) {
    for (const Tensor& t : *list) {
      if (t.cols() != width) throw ShapeError("pairwise_wasserstein: inconsistent feature widths");
    }
  }

  std::vector<RowNormalized> na;
  std::vector<RowNormalized> nb;
  for (const Tensor& t : a) na.push_back(normalize_rows(t.value()));
  for (const Tensor& t : b) nb.push_back(normalize_rows(t.value()));

  const std::vector<PairIndex> idx = enumerate_pairs(a.size(), b.size(), pairs);
  std::vector<Matrix> costs(idx.size());
  parallel_for(idx.size(), run.threads, [&](std::size_t n) {
    costs[n] = cosine_cost(na[idx[n].i].unit, nb[idx[n].j].unit, tau);
  });
  std::vector<Matrix> plans = plans_for(idx, run, [&](std::size_t n) {
    return sinkhorn(costs[n], uniform_marginal(costs[n].rows()), uniform_marginal(costs[n].cols()), opts)
        .coupling;
  });

  Matrix value = Matrix::Zero(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (std::size_t n = 0; n < idx.size(); ++n) {
    if (plans[n].rows() != costs[n].rows() || plans[n].cols() != costs[n].cols()) {
      throw std::logic_error("PlanCache: replayed plan has the wrong shape");
    }
    const double w = (plans[n].array() * costs[n].array()).sum();
    value(idx[n].i, idx[n].j) = w;
    if (pairs == PairSet::kSymmetric) value(idx[n].j, idx[n].i) = w;
  }

  std::vector<Tensor> inputs = concat_inputs(a, b, pairs);
  const bool symmetric = pairs == PairSet::kSymmetric;
  auto backward = [inputs, na = std::move(na), nb = std::move(nb), idx, costs = std::move(costs),
                   plans = std::move(plans), tau, symmetric, n_a = a.size()](const Matrix& g) {
    std::vector<Matrix> d_unit(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const Matrix& v = inputs[t].value();
      d_unit[t] = Matrix::Zero(v.rows(), v.cols());
    }
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto [i, j] = idx[n];
      const double gij = symmetric ? g(i, j) + g(j, i) : g(i, j);
      if (gij == 0.0) continue;
      const Matrix d_cos = (plans[n].array() * costs[n].array()).matrix() * (-gij / tau);
      const std::size_t slot_b = symmetric ? static_cast<std::size_t>(j) : n_a + static_cast<std::size_t>(j);
      d_unit[static_cast<std::size_t>(i)] += d_cos * nb[j].unit;
      d_unit[slot_b] += d_cos.transpose() * na[i].unit;
    }
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      if (!inputs[t].tracked()) continue;
      const RowNormalized& norm = t < n_a ? na[t] : nb[t - n_a];
      inputs[t].accumulate(normalize_rows_backward(d_unit[t], norm));
    }
  };
  return ad::make_result("pairwise_wasserstein", std::move(value), std::span<const Tensor>(inputs),
                         std::move(backward));
}

Tensor pairwise_gromov_wasserstein(std::span<const Tensor> da, std::span<const Tensor> db_in, PairSet pairs,
                                   const GwOptions& opts, const PairwiseOptions& run) {
  std::span<const Tensor> db = resolve_b(da, db_in, pairs, "pairwise_gromov_wasserstein");
  const std::vector<PairIndex> idx = enumerate_pairs(da.size(), db.size(), pairs);
  std::vector<Matrix> plans = plans_for(idx, run, [&](std::size_t n) {
    return solve_gromov_wasserstein(da[idx[n].i].value(), db[idx[n].j].value(), opts).plan;
  });

  Matrix value = Matrix::Zero(static_cast<Index>(da.size()), static_cast<Index>(db.size()));
  std::vector<double> per_pair(idx.size());
  parallel_for(idx.size(), run.threads, [&](std::size_t n) {
    per_pair[n] = gw_objective(da[idx[n].i].value(), db[idx[n].j].value(), plans[n]);
  });
  for (std::size_t n = 0; n < idx.size(); ++n) {
    value(idx[n].i, idx[n].j) = per_pair[n];
    if (pairs == PairSet::kSymmetric) value(idx[n].j, idx[n].i) = per_pair[n];
  }

  std::vector<Tensor> inputs = concat_inputs(da, db, pairs);
  const bool symmetric = pairs == PairSet::kSymmetric;
  const int threads = run.threads;
  auto backward = [inputs, idx, plans = std::move(plans), symmetric, n_a = da.size(),
                   threads](const Matrix& g) {
    std::vector<Matrix> pair_a(idx.size());
    std::vector<Matrix> pair_b(idx.size());
    const auto slot_b = [&](Index j) {
      return symmetric ? static_cast<std::size_t>(j) : n_a + static_cast<std::size_t>(j);
    };
    parallel_for(idx.size(), threads, [&](std::size_t n) {
      const auto [i, j] = idx[n];
      const double gij = symmetric ? g(i, j) + g(j, i) : g(i, j);
      const Tensor& ta = inputs[static_cast<std::size_t>(i)];
      const Tensor& tb = inputs[slot_b(j)];
      if (gij == 0.0 || (!ta.tracked() && !tb.tracked())) return;
      gw_gradients(ta.value(), tb.value(), plans[n], ta.tracked() ? &pair_a[n] : nullptr,
                   tb.tracked() ? &pair_b[n] : nullptr);
      if (ta.tracked()) pair_a[n] *= gij;
      if (tb.tracked()) pair_b[n] *= gij;
    });
    // Fixed-order reduction keeps results independent of the thread count.
    for (std::size_t n = 0; n < idx.size(); ++n) {
      if (pair_a[n].size() > 0) inputs[static_cast<std::size_t>(idx[n].i)].accumulate(pair_a[n]);
      if (pair_b[n].size() > 0) inputs[slot_b(idx[n].j)].accumulate(pair_b[n]);
    }
  };
  return ad::make_result("pairwise_gromov_wasserstein", std::move(value), std::span<const Tensor>(inputs),
                         std::move(backward));
}

// ---------------------------------------------------------------------------
// Brute-force references

namespace {

constexpr Index kOracleMaxSize = 6;

}  // namespace

double exact_ot_oracle(const Matrix& cost) {
  const Index k = cost.rows();
  if (k != cost.cols() || k < 1 || k > kOracleMaxSize) {
    throw ShapeError(fmt::format("exact_ot_oracle: needs a square cost with 1 <= k <= {}, got {}x{}",
                                 kOracleMaxSize, cost.rows(), cost.cols()));
  }
  std::vector<Index> perm = identity_perm(k);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Index p = 0; p < k; ++p) total += cost(p, perm[p]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(k);
}

double exact_ot_oracle(const Matrix& da, const Matrix& db) {
  const Index k = da.rows();
  if (da.cols() != k || db.rows() != k || db.cols() != k || k < 1 || k > kOracleMaxSize) {
    throw ShapeError(fmt::format("exact_ot_oracle: needs equal square sizes 1 <= k <= {}", kOracleMaxSize));
  }
  std::vector<Index> perm = identity_perm(k);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Index p = 0; p < k; ++p) {
      for (Index pp = 0; pp < k; ++pp) total += std::abs(da(p, pp) - db(perm[p], perm[pp]));
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(k * k);
}

}  // namespace sgec::ot
