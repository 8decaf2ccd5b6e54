#include "sgec/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include <fmt/format.h>
#include <json.hpp>

namespace sgec {

namespace fs = std::filesystem;

Graph::Graph(Index n_nodes, Index n_classes, std::vector<std::pair<NodeId, NodeId>> edges,
             Matrix features, std::vector<int> labels, Splits splits)
    : n_nodes_(n_nodes),
      n_classes_(n_classes),
      edges_(std::move(edges)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      splits_(std::move(splits)) {
  for (auto& [u, v] : edges_) {
    if (u > v) std::swap(u, v);
  }
  validate();
  build_adjacency();
}

void Graph::validate() const {
  if (n_nodes_ < 0 || n_classes_ < 0) throw std::invalid_argument("negative counts");
  if (features_.rows() != n_nodes_) {
    throw std::invalid_argument(
        fmt::format("features have {} rows, expected {}", features_.rows(), n_nodes_));
  }
  if (static_cast<Index>(labels_.size()) != n_nodes_) {
    throw std::invalid_argument(
        fmt::format("{} labels for {} nodes", labels_.size(), n_nodes_));
  }
  std::set<std::pair<NodeId, NodeId>> seen;
  for (auto [u, v] : edges_) {
    if (u < 0 || v < 0 || u >= n_nodes_ || v >= n_nodes_) {
      throw std::invalid_argument(fmt::format("edge ({}, {}) out of range", u, v));
    }
    if (u == v) throw std::invalid_argument(fmt::format("self-loop on node {}", u));
    if (!seen.emplace(std::min(u, v), std::max(u, v)).second) {
      throw std::invalid_argument(fmt::format("duplicate edge ({}, {})", u, v));
    }
  }
  for (Index i = 0; i < n_nodes_; ++i) {
    int y = labels_[i];
    if (y != kUnlabeled && (y < 0 || y >= n_classes_)) {
      throw std::invalid_argument(
          fmt::format("label {} of node {} out of range [0, {})", y, i, n_classes_));
    }
  }
  std::vector<char> owner(static_cast<std::size_t>(n_nodes_), 0);
  auto check_split = [&](const std::vector<NodeId>& ids, char tag, const char* name) {
    for (NodeId id : ids) {
      if (id < 0 || id >= n_nodes_) {
        throw std::invalid_argument(fmt::format("{} split id {} out of range", name, id));
      }
      if (owner[id] != 0) {
        throw std::invalid_argument(fmt::format("node {} appears in more than one split", id));
      }
      owner[id] = tag;
    }
  };
  check_split(splits_.train, 1, "train");
  check_split(splits_.val, 2, "val");
  check_split(splits_.test, 3, "test");
}

void Graph::build_adjacency() {
  adjacency_.assign(static_cast<std::size_t>(n_nodes_), {});
  for (auto [u, v] : edges_) {
    adjacency_[u].push_back(v);
    adjacency_[v].push_back(u);
  }
  for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
}

bool operator==(const Graph& a, const Graph& b) {
  return a.n_nodes_ == b.n_nodes_ && a.n_classes_ == b.n_classes_ && a.edges_ == b.edges_ &&
         a.features_.rows() == b.features_.rows() && a.features_.cols() == b.features_.cols() &&
         a.features_ == b.features_ && a.labels_ == b.labels_ &&
         a.splits_.train == b.splits_.train && a.splits_.val == b.splits_.val &&
         a.splits_.test == b.splits_.test;
}

// ---------------------------------------------------------------------------
// Container I/O

namespace {

std::ifstream open_required(const fs::path& dir, const char* file, const char* what) {
  fs::path p = dir / file;
  if (!fs::exists(p)) {
    throw std::runtime_error(fmt::format("missing {} file: {}", what, p.string()));
  }
  std::ifstream in(p);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", p.string()));
  return in;
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size();
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

std::vector<NodeId> read_id_list(const fs::path& dir, const char* file, const char* what) {
  auto in = open_required(dir, file, what);
  std::vector<NodeId> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty()) continue;
    NodeId id = 0;
    if (!parse_number(t, id)) {
      throw std::runtime_error(fmt::format("{}:{}: not an integer node id", file, lineno));
    }
    ids.push_back(id);
  }
  return ids;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
  out << content;
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", p.string()));
}

}  // namespace

Graph load_graph(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw std::runtime_error(fmt::format("missing container directory: {}", dir.string()));
  }

  nlohmann::json meta;
  {
    auto in = open_required(dir, "meta.json", "meta");
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(fmt::format("meta.json: {}", e.what()));
    }
  }
  auto meta_count = [&](const char* key) -> Index {
    if (!meta.contains(key) || !meta[key].is_number_integer() || meta[key].get<Index>() < 0) {
      throw std::runtime_error(fmt::format("meta.json: missing or invalid '{}'", key));
    }
    return meta[key].get<Index>();
  };
  const Index n_nodes = meta_count("n_nodes");
  const Index n_features = meta_count("n_features");
  const Index n_classes = meta_count("n_classes");

  // Edges; an optional non-numeric first line is a header.
  std::vector<std::pair<NodeId, NodeId>> edges;
  {
    auto in = open_required(dir, "edges.tsv", "edges");
    std::set<std::pair<NodeId, NodeId>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto t = trim(line);
      if (t.empty()) continue;
      auto fields = split_tabs(t);
      NodeId u = 0, v = 0;
      if (fields.size() != 2 || !parse_number(fields[0], u) || !parse_number(fields[1], v)) {
        if (lineno == 1) continue;
        throw std::runtime_error(fmt::format("edges.tsv:{}: expected 'u<TAB>v'", lineno));
      }
      if (u == v) throw std::runtime_error(fmt::format("edges.tsv:{}: self-loop", lineno));
      if (u < 0 || v < 0 || u >= n_nodes || v >= n_nodes) {
        throw std::runtime_error(fmt::format("edges.tsv:{}: node id out of range", lineno));
      }
      if (u > v) std::swap(u, v);
      if (!seen.emplace(u, v).second) {
        throw std::runtime_error(fmt::format("edges.tsv:{}: duplicate edge ({}, {})", lineno, u, v));
      }
      edges.emplace_back(u, v);
    }
  }

  Matrix features(n_nodes, n_features);
  {
    auto in = open_required(dir, "features.tsv", "features");
    std::string line;
    Index row = 0;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (t.empty() && n_features > 0) continue;
      if (row >= n_nodes) {
        throw std::runtime_error(
            fmt::format("features.tsv: more than {} rows (meta n_nodes)", n_nodes));
      }
      auto fields = n_features == 0 ? std::vector<std::string_view>{} : split_tabs(t);
      if (static_cast<Index>(fields.size()) != n_features) {
        throw std::runtime_error(fmt::format("features.tsv:{}: {} columns, meta says {}",
                                             row + 1, fields.size(), n_features));
      }
      for (Index c = 0; c < n_features; ++c) {
        double x = 0.0;
        if (!parse_number(fields[c], x) || !std::isfinite(x)) {
          throw std::runtime_error(fmt::format("features.tsv:{}: non-numeric entry '{}'",
                                               row + 1, std::string(fields[c])));
        }
        features(row, c) = x;
      }
      ++row;
    }
    if (row != n_nodes) {
      throw std::runtime_error(
          fmt::format("features.tsv: {} rows, meta n_nodes is {}", row, n_nodes));
    }
  }

  std::vector<int> labels;
  {
    auto in = open_required(dir, "labels.tsv", "labels");
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (t.empty()) continue;
      int y = 0;
      if (!parse_number(t, y)) {
        throw std::runtime_error(fmt::format("labels.tsv:{}: not an integer", labels.size() + 1));
      }
      if (y != kUnlabeled && (y < 0 || y >= n_classes)) {
        throw std::runtime_error(fmt::format("labels.tsv:{}: label {} out of range [0, {})",
                                             labels.size() + 1, y, n_classes));
      }
      labels.push_back(y);
    }
    if (static_cast<Index>(labels.size()) != n_nodes) {
      throw std::runtime_error(
          fmt::format("labels.tsv: {} rows, meta n_nodes is {}", labels.size(), n_nodes));
    }
  }

  Splits splits;
  splits.train = read_id_list(dir, "split_train.tsv", "train split");
  splits.val = read_id_list(dir, "split_val.tsv", "val split");
  splits.test = read_id_list(dir, "split_test.tsv", "test split");

  try {
    return Graph(n_nodes, n_classes, std::move(edges), std::move(features), std::move(labels),
                 std::move(splits));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(fmt::format("{}: {}", dir.string(), e.what()));
  }
}

void save_graph(const Graph& g, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  nlohmann::ordered_json meta;
  meta["n_nodes"] = g.n_nodes();
  meta["n_features"] = g.n_features();
  meta["n_classes"] = g.n_classes();
  write_file(dir / "meta.json", meta.dump(2) + "\n");

  std::string edges = "u\tv\n";
  for (auto [u, v] : g.edges()) edges += fmt::format("{}\t{}\n", u, v);
  write_file(dir / "edges.tsv", edges);

  std::string feats;
  const Matrix& x = g.features();
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index c = 0; c < x.cols(); ++c) {
      if (c > 0) feats += '\t';
      feats += fmt::format("{:.9g}", x(i, c));
    }
    feats += '\n';
  }
  write_file(dir / "features.tsv", feats);

  std::string labels;
  for (int y : g.labels()) labels += fmt::format("{}\n", y);
  write_file(dir / "labels.tsv", labels);

  auto ids = [](const std::vector<NodeId>& v) {
    std::string s;
    for (NodeId id : v) s += fmt::format("{}\n", id);
    return s;
  };
  write_file(dir / "split_train.tsv", ids(g.splits().train));
  write_file(dir / "split_val.tsv", ids(g.splits().val));
  write_file(dir / "split_test.tsv", ids(g.splits().test));
}

SparseMatrix normalize_adjacency(const Graph& g) {
  const Index n = g.n_nodes();
  std::vector<double> degree(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) degree[i] = 1.0 + static_cast<double>(g.neighbors(i).size());

  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(n + 2 * g.n_edges()));
  for (Index p = 0; p < n; ++p) {
    entries.emplace_back(p, p, 1.0 / degree[p]);
    for (NodeId q : g.neighbors(p)) {
      entries.emplace_back(p, q, 1.0 / std::sqrt(degree[p] * degree[q]));
    }
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());
  return a;
}

Graph gen_sbm(const SbmParams& params) {
  if (params.blocks < 1) throw std::invalid_argument("gen_sbm: blocks must be >= 1");
  if (params.n_per_block < 1) throw std::invalid_argument("gen_sbm: zero nodes");
  for (double p : {params.p_in, params.p_out}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("gen_sbm: probability outside [0, 1]");
  }
  const Index n = params.n_per_block * params.blocks;
  Rng rng = make_rng(params.seed, Stream::kData);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto block_of = [&](Index i) { return static_cast<int>(i / params.n_per_block); };

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (Index u = 0; u < n; ++u) {
    for (Index v = u + 1; v < n; ++v) {
      double p = block_of(u) == block_of(v) ? params.p_in : params.p_out;
      if (unif(rng) < p) edges.emplace_back(u, v);
    }
  }

  std::normal_distribution<double> noise(0.0, params.noise_std);
  Matrix x(n, params.blocks);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < params.blocks; ++c) {
      x(i, c) = (c == block_of(i) ? 1.0 : 0.0) + noise(rng);
    }
    labels[i] = block_of(i);
  }

  std::vector<NodeId> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(n * 6 / 10);
  const auto n_val = static_cast<std::size_t>(n * 2 / 10);
  Splits splits;
  splits.train.assign(order.begin(), order.begin() + n_train);
  splits.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  splits.test.assign(order.begin() + n_train + n_val, order.end());
  for (auto* s : {&splits.train, &splits.val, &splits.test}) std::sort(s->begin(), s->end());

  return Graph(n, params.blocks, std::move(edges), std::move(x), std::move(labels),
               std::move(splits));
}

}  // namespace sgec
