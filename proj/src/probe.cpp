#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "sgec/pipeline.hpp"

namespace sgec {

namespace {

struct SplitData {
  Matrix x;
  std::vector<int> y;
};

SplitData gather_split(const Matrix& emb, const Graph& g, const std::vector<NodeId>& ids, const char* name) {
  if (ids.empty()) throw std::invalid_argument(fmt::format("linear_probe: empty {} split", name));
  SplitData d{Matrix(static_cast<Index>(ids.size()), emb.cols()), {}};
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const NodeId v = ids[r];
    if (v < 0 || v >= emb.rows()) throw std::out_of_range(fmt::format("linear_probe: node {} out of range", v));
    const int label = g.labels()[static_cast<std::size_t>(v)];
    if (label < 0) throw std::invalid_argument(fmt::format("linear_probe: {} node {} is unlabeled", name, v));
    d.x.row(static_cast<Index>(r)) = emb.row(v);
    d.y.push_back(label);
  }
  return d;
}

Matrix logits(const Matrix& x, const Matrix& w, const Matrix& b) {
  return (x * w).rowwise() + b.row(0);
}

double cross_entropy(const SplitData& d, const Matrix& w, const Matrix& b) {
  const Matrix z = logits(d.x, w, b);
  double total = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    total += m + std::log((z.row(r).array() - m).exp().sum()) - z(r, d.y[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(z.rows());
}

double accuracy(const SplitData& d, const Matrix& w, const Matrix& b) {
  const Matrix z = logits(d.x, w, b);
  Index hits = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    Index arg = 0;
    z.row(r).maxCoeff(&arg);
    if (arg == d.y[static_cast<std::size_t>(r)]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(z.rows());
}

}  // namespace

ProbeResult linear_probe(const Matrix& embeddings, const Graph& g, std::uint64_t probe_seed, const ProbeOptions& opts) {
  if (embeddings.rows() != g.n_nodes()) {
    throw ShapeError(fmt::format("linear_probe: {} embedding rows for {} nodes", embeddings.rows(), g.n_nodes()));
  }
  if (g.n_classes() < 1) throw std::invalid_argument("linear_probe: graph has no classes");
  const SplitData train = gather_split(embeddings, g, g.splits().train, "train");
  const SplitData val = gather_split(embeddings, g, g.splits().val, "val");
  const SplitData test = gather_split(embeddings, g, g.splits().test, "test");

  const Index c = g.n_classes();
  Rng rng = make_rng(probe_seed, Stream::kProbe);
  Matrix w = glorot_uniform(embeddings.cols(), c, rng);
  Matrix b = Matrix::Zero(1, c);
  Matrix onehot = Matrix::Zero(train.x.rows(), c);
  for (std::size_t r = 0; r < train.y.size(); ++r) onehot(static_cast<Index>(r), train.y[r]) = 1.0;

  AdamState adam;
  std::vector<Matrix*> params{&w, &b};
  ProbeResult best;
  best.val_accuracy = -1.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const double inv_n = 1.0 / static_cast<double>(train.x.rows());
  for (int step = 1; step <= opts.max_steps; ++step) {
    Matrix p = logits(train.x, w, b);
    for (Index r = 0; r < p.rows(); ++r) {
      p.row(r).array() -= p.row(r).maxCoeff();
      p.row(r) = p.row(r).array().exp().matrix();
      p.row(r) /= p.row(r).sum();
    }
    const Matrix dz = (p - onehot) * inv_n;
    std::vector<Matrix> grads{train.x.transpose() * dz, dz.colwise().sum()};
    adam_step(adam, params, grads, opts.lr);

    // Val accuracy ranks checkpoints; val cross-entropy breaks ties.
    const double v = accuracy(val, w, b);
    const double loss = cross_entropy(val, w, b);
    if (v > best.val_accuracy || (v == best.val_accuracy && loss < best_val_loss)) {
      best.val_accuracy = v;
      best_val_loss = loss;
      best.test_accuracy = accuracy(test, w, b);
      best.steps = step;
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      break;
    }
  }
  return best;
}

EvalResult evaluate_embeddings(const Matrix& embeddings, const Graph& g, int n_repeats, std::uint64_t seed) {
  if (n_repeats < 1) throw std::invalid_argument("evaluate: n_repeats must be >= 1");
  EvalResult out;
  for (int r = 0; r < n_repeats; ++r) {
    out.repeats.push_back(linear_probe(embeddings, g, mix_seed(seed) + static_cast<std::uint64_t>(r)));
  }
  auto mean_std = [&](auto field, double& mean, double& sd) {
    double sum = 0.0;
    for (const auto& p : out.repeats) sum += p.*field;
    mean = sum / n_repeats;
    double ss = 0.0;
    for (const auto& p : out.repeats) ss += (p.*field - mean) * (p.*field - mean);
    sd = n_repeats > 1 ? std::sqrt(ss / (n_repeats - 1)) : 0.0;
  };
  mean_std(&ProbeResult::test_accuracy, out.test_mean, out.test_std);
  mean_std(&ProbeResult::val_accuracy, out.val_mean, out.val_std);
  return out;
}

}  // namespace sgec
