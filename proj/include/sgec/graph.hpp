#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "sgec/core.hpp"

namespace sgec {

using NodeId = std::int64_t;

inline constexpr int kUnlabeled = -1;

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
};

// Undirected attributed graph with node labels and train/val/test splits.
//
// Edges are stored once as (u, v) with u < v. The sorted adjacency lists are
// derived from the edge list by finalize() and are what every traversal uses.
class Graph {
 public:
  Graph() = default;
  Graph(Index n_nodes, Index n_classes, std::vector<std::pair<NodeId, NodeId>> edges,
        Matrix features, std::vector<int> labels, Splits splits);

  Index n_nodes() const { return n_nodes_; }
  Index n_features() const { return features_.cols(); }
  Index n_classes() const { return n_classes_; }
  Index n_edges() const { return static_cast<Index>(edges_.size()); }

  const std::vector<std::pair<NodeId, NodeId>>& edges() const { return edges_; }
  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const Splits& splits() const { return splits_; }

  // Neighbors of `node` in ascending id order.
  const std::vector<NodeId>& neighbors(NodeId node) const { return adjacency_[node]; }

  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;

  friend bool operator==(const Graph& a, const Graph& b);

 private:
  void build_adjacency();

  Index n_nodes_ = 0;
  Index n_classes_ = 0;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  Matrix features_;
  std::vector<int> labels_;
  Splits splits_;
  std::vector<std::vector<NodeId>> adjacency_;
};

// Reads the container directory layout (meta.json, edges.tsv, features.tsv,
// labels.tsv, split_{train,val,test}.tsv).
Graph load_graph(const std::filesystem::path& dir);

// Writes the container layout. Features are printed with 9 significant digits.
void save_graph(const Graph& g, const std::filesystem::path& dir);

// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
SparseMatrix normalize_adjacency(const Graph& g);

struct SbmParams {
  Index n_per_block = 100;
  Index blocks = 2;
  double p_in = 0.1;
  double p_out = 0.01;
  std::uint64_t seed = 0;
  double noise_std = 0.1;
};

// Stochastic block model with one-hot block features plus Gaussian noise and a
// seeded 60/20/20 split.
Graph gen_sbm(const SbmParams& params);

}  // namespace sgec
