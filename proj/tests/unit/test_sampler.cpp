#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "sgec/sampler.hpp"

using namespace sgec;
using ad::Tape;
using ad::Tensor;

namespace {

Graph clique(Index n) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) edges.emplace_back(u, v);
  }
  return Graph(n, 1, std::move(edges), Matrix::Identity(n, n), std::vector<int>(static_cast<std::size_t>(n), 0),
               {});
}

void check_subgraph_invariants(const Graph& g, const Subgraph& s) {
  CHECK(s.nodes.front() == s.center);
  CHECK(std::set<NodeId>(s.nodes.begin(), s.nodes.end()).size() == s.nodes.size());
  Index induced = 0;
  for (Index a = 0; a < s.size(); ++a) {
    for (Index b : s.local_adj[static_cast<std::size_t>(a)]) {
      const auto& back = s.local_adj[static_cast<std::size_t>(b)];
      CHECK(std::find(back.begin(), back.end(), a) != back.end());
      ++induced;
    }
  }
  Index expected = 0;
  const std::set<NodeId> members(s.nodes.begin(), s.nodes.end());
  for (auto [u, v] : g.edges()) expected += members.count(u) && members.count(v);
  CHECK(induced == 2 * expected);
  const Matrix d = test::floyd_hops(s.local_adj);
  CHECK(std::isfinite(d.maxCoeff()));
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("sample_node_set") {
    Rng rng(1);
    std::vector<NodeId> all = sample_node_set(10, 10, rng);
    std::sort(all.begin(), all.end());
    for (NodeId v = 0; v < 10; ++v) CHECK(all[static_cast<std::size_t>(v)] == v);

    Rng a(7), b(7);
    CHECK(sample_node_set(100, 12, a) == sample_node_set(100, 12, b));

    Rng c(3);
    CHECK_THROWS(sample_node_set(10, 1, c));
    CHECK(sample_node_set(5, 50, c).size() == 5);
  }

  TEST_CASE("bfs_subgraph examples") {
    const Subgraph p = bfs_subgraph(test::path_graph(5), 2, 3);
    CHECK(p.nodes == std::vector<NodeId>{2, 1, 3});

    const Graph isolated(3, 1, {{1, 2}}, Matrix::Zero(3, 1), {0, 0, 0}, {});
    const Subgraph one = bfs_subgraph(isolated, 0, 15);
    CHECK(one.nodes == std::vector<NodeId>{0});
    CHECK(one.local_adj.size() == 1);

    const Subgraph c = bfs_subgraph(clique(4), 0, 3);
    CHECK(c.nodes == std::vector<NodeId>{0, 1, 2});
    for (const auto& nb : c.local_adj) CHECK(nb.size() == 2);
  }

  TEST_CASE("bfs_subgraph invariants on random graphs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Graph g = gen_sbm({.n_per_block = 20, .blocks = 2, .p_in = 0.15, .p_out = 0.02, .seed = seed});
      for (NodeId center : {0, 7, 25, 39}) check_subgraph_invariants(g, bfs_subgraph(g, center, 15));
    }
  }

  TEST_CASE("bfs_subgraph ignores edge storage order") {
    const Graph g = gen_sbm({.n_per_block = 15, .blocks = 2, .p_in = 0.3, .p_out = 0.05, .seed = 4});
    auto edges = g.edges();
    std::reverse(edges.begin(), edges.end());
    Rng rng(2);
    std::shuffle(edges.begin(), edges.end(), rng);
    const Graph h(g.n_nodes(), g.n_classes(), edges, g.features(), g.labels(), g.splits());
    for (NodeId c = 0; c < g.n_nodes(); c += 3) {
      CHECK(bfs_subgraph(g, c, 8).nodes == bfs_subgraph(h, c, 8).nodes);
      CHECK(bfs_subgraph(g, c, 8).local_adj == bfs_subgraph(h, c, 8).local_adj);
    }
  }

  TEST_CASE("bfs_subgraph preconditions") {
    CHECK_THROWS(bfs_subgraph(test::path_graph(3), 5, 2));
    CHECK_THROWS(bfs_subgraph(test::path_graph(3), 0, 0));
  }

  TEST_CASE("hop structure matrices") {
    const Subgraph tri = bfs_subgraph(clique(3), 0, 3);
    const Matrix dt = structure_matrix(tri, std::nullopt, StructureMode::kHops).distances.value();
    CHECK(dt == Matrix::Ones(3, 3) - Matrix::Identity(3, 3));

    const Subgraph path = bfs_subgraph(test::path_graph(3), 0, 3);
    const Matrix dp = structure_matrix(path, std::nullopt, StructureMode::kHops).distances.value();
    CHECK(path.nodes == std::vector<NodeId>{0, 1, 2});
    CHECK(dp(0, 2) == 2.0);
  }

  TEST_CASE("hop structure matrix equals Floyd-Warshall on the local adjacency") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Graph g = gen_sbm({.n_per_block = 40, .blocks = 2, .p_in = 0.08, .p_out = 0.01, .seed = seed});
      for (NodeId c : {0, 13, 51}) {
        const Subgraph s = bfs_subgraph(g, c, 35);
        const Matrix d = structure_matrix(s, std::nullopt, StructureMode::kHops).distances.value();
        CHECK(d == test::floyd_hops(s.local_adj));
      }
    }
  }

  TEST_CASE("feature-weighted structure matrix") {
    const Graph g = gen_sbm({.n_per_block = 10, .blocks = 2, .p_in = 0.5, .p_out = 0.1, .seed = 6});
    const Subgraph s = bfs_subgraph(g, 0, 6);
    SUBCASE("identical features give zeros") {
      const Tensor same(test::random_matrix(1, 3, 1).replicate(s.size(), 1));
      CHECK(structure_matrix(s, same, StructureMode::kFeatureWeighted).distances.value().cwiseAbs().maxCoeff() <
            1e-12);
    }
    SUBCASE("symmetric with zero diagonal") {
      const Matrix d =
          structure_matrix(s, Tensor(test::random_matrix(s.size(), 3, 2)), StructureMode::kFeatureWeighted)
              .distances.value();
      CHECK((d - d.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(d.diagonal().cwiseAbs().maxCoeff() == 0.0);
      CHECK(d.minCoeff() >= 0.0);
    }
    SUBCASE("gradient with path selection held fixed") {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const double err = ad::finite_diff_check(
            [&](Tape&, const Tensor& x) {
              const Tensor d = structure_matrix(s, x, StructureMode::kFeatureWeighted).distances;
              return ad::sum(ad::mul(d, Tensor(test::random_matrix(s.size(), s.size(), 5))));
            },
            test::random_matrix(s.size(), 3, seed + 10), 1e-6);
        CHECK(err < 1e-5);
      }
    }
    SUBCASE("mode and features must agree") {
      CHECK_THROWS(structure_matrix(s, std::nullopt, StructureMode::kFeatureWeighted));
      CHECK_THROWS(structure_matrix(s, Tensor(Matrix::Ones(s.size(), 2)), StructureMode::kHops));
    }
  }
}
