#pragma once

#include <optional>
#include <vector>

#include "sgec/autodiff.hpp"
#include "sgec/graph.hpp"
#include "sgec/layers.hpp"

namespace sgec {

// BFS-induced subgraph around a center node.
struct Subgraph {
  NodeId center = 0;
  std::vector<NodeId> nodes;  // local -> global, BFS discovery order, nodes[0] == center
  Neighborhoods local_adj;    // every original edge among `nodes`, in local indices

  Index size() const { return static_cast<Index>(nodes.size()); }
  std::vector<Index> index_map() const { return {nodes.begin(), nodes.end()}; }
};

enum class StructureMode { kHops, kFeatureWeighted };

// Intra-subgraph distance matrix; symmetric with zero diagonal.
struct StructureMatrix {
  ad::Tensor distances;
  StructureMode mode = StructureMode::kHops;
};

// Uniform sample of `size` distinct node ids without replacement, in draw
// order. Sizes above n_nodes are clamped with a warning.
std::vector<NodeId> sample_node_set(Index n_nodes, Index size, Rng& rng);

// BFS from `center`, expanding neighbors in ascending id order, stopping once
// k nodes are discovered. A component smaller than k is returned whole.
Subgraph bfs_subgraph(const Graph& g, NodeId center, Index k);

// Hop mode: unweighted shortest-path lengths over local_adj.
// Feature-weighted mode: Dijkstra with w_uv = max(0, 1 - cos(x_u, x_v)) over
// the rows of `feats`; gradients reach `feats` through the weights of the
// chosen shortest paths, with the path choice itself held fixed.
StructureMatrix structure_matrix(const Subgraph& sub, const std::optional<ad::Tensor>& feats,
                                 StructureMode mode);

}  // namespace sgec
