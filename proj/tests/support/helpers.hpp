#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sgec/core.hpp"
#include "sgec/graph.hpp"

namespace sgec::test {

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = d(rng);
  }
  return m;
}

// Entries in [lo, hi] at least `margin` away from zero.
inline Matrix random_away_from_zero(Index rows, Index cols, std::uint64_t seed, double margin = 1e-3) {
  Matrix m = random_matrix(rows, cols, seed);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      if (std::abs(m(r, c)) < margin) m(r, c) = m(r, c) < 0 ? -margin - 0.1 : margin + 0.1;
    }
  }
  return m;
}

// Minimum over all permutations p of (1/k) sum_r cost(r, p(r)); written
// independently of the library's enumeration.
inline double brute_force_assignment(const Matrix& cost) {
  const Index k = cost.rows();
  std::vector<Index> p(static_cast<std::size_t>(k));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Index r = 0; r < k; ++r) s += cost(r, p[static_cast<std::size_t>(r)]);
    best = std::min(best, s / static_cast<double>(k));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

// Minimum over permutation couplings T = P/k of
// sum_{p,p',q,q'} T_pq T_p'q' |da(p,p') - db(q,q')|.
inline double brute_force_gw(const Matrix& da, const Matrix& db) {
  const Index k = da.rows();
  std::vector<Index> p(static_cast<std::size_t>(k));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Index a = 0; a < k; ++a) {
      for (Index b = 0; b < k; ++b) {
        s += std::abs(da(a, b) - db(p[static_cast<std::size_t>(a)], p[static_cast<std::size_t>(b)]));
      }
    }
    best = std::min(best, s / static_cast<double>(k * k));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

// Floyd-Warshall over adjacency lists with unit weights.
inline Matrix floyd_hops(const std::vector<std::vector<Index>>& adj) {
  const Index n = static_cast<Index>(adj.size());
  const double inf = std::numeric_limits<double>::infinity();
  Matrix d = Matrix::Constant(n, n, inf);
  for (Index v = 0; v < n; ++v) {
    d(v, v) = 0.0;
    for (Index u : adj[static_cast<std::size_t>(v)]) d(v, u) = 1.0;
  }
  for (Index m = 0; m < n; ++m) {
    for (Index a = 0; a < n; ++a) {
      for (Index b = 0; b < n; ++b) d(a, b) = std::min(d(a, b), d(a, m) + d(m, b));
    }
  }
  return d;
}

// Random connected metric: shortest paths of a random weighted graph.
inline Matrix random_graph_metric(Index k, std::uint64_t seed, bool unit_weights) {
  Rng rng(seed);
  std::uniform_real_distribution<double> w(0.2, 2.0);
  std::bernoulli_distribution keep(0.5);
  const double inf = std::numeric_limits<double>::infinity();
  Matrix d = Matrix::Constant(k, k, inf);
  for (Index v = 0; v < k; ++v) d(v, v) = 0.0;
  for (Index v = 1; v < k; ++v) {
    std::uniform_int_distribution<Index> parent(0, v - 1);
    const Index u = parent(rng);
    d(u, v) = d(v, u) = unit_weights ? 1.0 : w(rng);
  }
  for (Index a = 0; a < k; ++a) {
    for (Index b = a + 1; b < k; ++b) {
      if (std::isinf(d(a, b)) && keep(rng)) d(a, b) = d(b, a) = unit_weights ? 1.0 : w(rng);
    }
  }
  for (Index m = 0; m < k; ++m) {
    for (Index a = 0; a < k; ++a) {
      for (Index b = 0; b < k; ++b) d(a, b) = std::min(d(a, b), d(a, m) + d(m, b));
    }
  }
  return d;
}

inline std::filesystem::path fixture_dir(const std::string& name) {
  return std::filesystem::path(SGEC_FIXTURE_DIR) / name;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgec_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Graph path_graph(Index n) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (Index v = 0; v + 1 < n; ++v) edges.emplace_back(v, v + 1);
  Matrix x = Matrix::Identity(n, n);
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  return Graph(n, 1, std::move(edges), std::move(x), std::move(labels), Splits{{0}, {}, {}});
}

}  // namespace sgec::test
