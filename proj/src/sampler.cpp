#include "sgec/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <queue>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cosine.hpp"

namespace sgec {

std::vector<NodeId> sample_node_set(Index n_nodes, Index size, Rng& rng) {
  if (size < 2) {
    throw std::invalid_argument(fmt::format("sample_node_set: size must be >= 2, got {}", size));
  }
  if (size > n_nodes) {
    spdlog::warn("sample_node_set: requested {} nodes from a graph with {}; clamping", size, n_nodes);
    size = n_nodes;
    if (size < 2) throw std::invalid_argument("sample_node_set: graph has fewer than 2 nodes");
  }
  // Partial Fisher-Yates.
  std::vector<NodeId> pool(static_cast<std::size_t>(n_nodes));
  std::iota(pool.begin(), pool.end(), 0);
  for (Index i = 0; i < size; ++i) {
    std::uniform_int_distribution<Index> pick(i, n_nodes - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(static_cast<std::size_t>(size));
  return pool;
}

Subgraph bfs_subgraph(const Graph& g, NodeId center, Index k) {
  if (center < 0 || center >= g.n_nodes()) {
    throw std::out_of_range(fmt::format("bfs_subgraph: center {} out of range", center));
  }
  if (k < 1) throw std::invalid_argument("bfs_subgraph: k must be >= 1");

  Subgraph sub;
  sub.center = center;
  std::unordered_map<NodeId, Index> local;
  sub.nodes.push_back(center);
  local.emplace(center, 0);
  std::deque<NodeId> frontier{center};
  while (!frontier.empty() && sub.size() < k) {
    NodeId v = frontier.front();
    frontier.pop_front();
    for (NodeId u : g.neighbors(v)) {
      if (sub.size() >= k) break;
      if (local.emplace(u, sub.size()).second) {
        sub.nodes.push_back(u);
        frontier.push_back(u);
      }
    }
  }

  sub.local_adj.assign(sub.nodes.size(), {});
  for (Index i = 0; i < sub.size(); ++i) {
    for (NodeId u : g.neighbors(sub.nodes[i])) {
      auto it = local.find(u);
      if (it != local.end()) sub.local_adj[i].push_back(it->second);
    }
    std::sort(sub.local_adj[i].begin(), sub.local_adj[i].end());
  }
  return sub;
}

namespace {

Matrix hop_distances(const Neighborhoods& adj) {
  const Index k = static_cast<Index>(adj.size());
  Matrix d = Matrix::Constant(k, k, std::numeric_limits<double>::infinity());
  for (Index s = 0; s < k; ++s) {
    d(s, s) = 0.0;
    std::deque<Index> q{s};
    while (!q.empty()) {
      Index v = q.front();
      q.pop_front();
      for (Index u : adj[v]) {
        if (std::isinf(d(s, u))) {
          d(s, u) = d(s, v) + 1.0;
          q.push_back(u);
        }
      }
    }
  }
  if (!d.allFinite()) throw std::invalid_argument("structure_matrix: subgraph is disconnected");
  return d;
}

struct LocalEdge {
  Index u;
  Index v;
};

}  // namespace

StructureMatrix structure_matrix(const Subgraph& sub, const std::optional<ad::Tensor>& feats,
                                 StructureMode mode) {
  const Index k = sub.size();
  if (mode == StructureMode::kHops) {
    if (feats.has_value()) {
      throw std::invalid_argument("structure_matrix: hop mode takes no features");
    }
    return {ad::Tensor(hop_distances(sub.local_adj)), mode};
  }
  if (!feats.has_value()) {
    throw std::invalid_argument("structure_matrix: feature-weighted mode requires features");
  }
  const ad::Tensor& x = *feats;
  if (x.rows() != k) {
    throw ShapeError(fmt::format("structure_matrix: {} feature rows for {} nodes", x.rows(), k));
  }

  std::vector<LocalEdge> edges;
  std::vector<std::vector<std::pair<Index, std::size_t>>> incident(static_cast<std::size_t>(k));
  for (Index v = 0; v < k; ++v) {
    for (Index u : sub.local_adj[v]) {
      if (v < u) {
        incident[v].emplace_back(u, edges.size());
        incident[u].emplace_back(v, edges.size());
        edges.push_back({v, u});
      }
    }
  }

  const RowNormalized unit = normalize_rows(x.value());
  std::vector<double> cosine(edges.size());
  std::vector<double> weight(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    cosine[e] = unit.unit.row(edges[e].u).dot(unit.unit.row(edges[e].v));
    weight[e] = std::max(0.0, 1.0 - cosine[e]);
  }

  // Shortest-path trees; path_edges[s][t] lists the edges on the chosen s-t path.
  using Item = std::pair<double, Index>;
  std::vector<std::vector<std::vector<std::size_t>>> path_edges(
      static_cast<std::size_t>(k), std::vector<std::vector<std::size_t>>(static_cast<std::size_t>(k)));
  Matrix d = Matrix::Zero(k, k);
  for (Index s = 0; s < k; ++s) {
    std::vector<double> dist(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
    std::vector<std::ptrdiff_t> pred_edge(static_cast<std::size_t>(k), -1);
    std::vector<Index> pred_node(static_cast<std::size_t>(k), -1);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s] = 0.0;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      auto [dv, v] = pq.top();
      pq.pop();
      if (dv > dist[v]) continue;
      for (auto [u, e] : incident[v]) {
        double nd = dv + weight[e];
        if (nd < dist[u]) {
          dist[u] = nd;
          pred_edge[u] = static_cast<std::ptrdiff_t>(e);
          pred_node[u] = v;
          pq.emplace(nd, u);
        }
      }
    }
    for (Index t = s + 1; t < k; ++t) {
      if (std::isinf(dist[t])) throw std::invalid_argument("structure_matrix: subgraph is disconnected");
      // Sum along the recorded path so the value matches the gradient route exactly.
      double len = 0.0;
      for (Index cur = t; cur != s; cur = pred_node[cur]) {
        path_edges[s][t].push_back(static_cast<std::size_t>(pred_edge[cur]));
        len += weight[pred_edge[cur]];
      }
      d(s, t) = len;
      d(t, s) = len;
    }
  }

  auto backward = [x, edges, cosine, unit, path_edges, k](const Matrix& g) {
    std::vector<double> d_weight(edges.size(), 0.0);
    for (Index s = 0; s < k; ++s) {
      for (Index t = s + 1; t < k; ++t) {
        const double gst = g(s, t) + g(t, s);
        for (std::size_t e : path_edges[s][t]) d_weight[e] += gst;
      }
    }
    Matrix d_unit = Matrix::Zero(unit.unit.rows(), unit.unit.cols());
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (d_weight[e] == 0.0 || 1.0 - cosine[e] <= 0.0) continue;
      const double d_cos = -d_weight[e];
      d_unit.row(edges[e].u) += d_cos * unit.unit.row(edges[e].v);
      d_unit.row(edges[e].v) += d_cos * unit.unit.row(edges[e].u);
    }
    x.accumulate(normalize_rows_backward(d_unit, unit));
  };
  return {ad::make_result("structure_matrix", std::move(d), {&x}, std::move(backward)), mode};
}

}  // namespace sgec
