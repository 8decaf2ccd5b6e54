#include "sgec/pipeline.hpp"

#include <chrono>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace sgec {

using ad::Tensor;

Model Model::init(Index in_dim, const TrainConfig& cfg) {
  if (in_dim < 1) throw std::invalid_argument("Model::init: input dimension must be >= 1");
  Rng rng = make_rng(cfg.seed, Stream::kInit);
  Model m;
  m.gcn1 = make_gcn_layer(in_dim, cfg.hidden_dim, rng);
  m.gcn2 = make_gcn_layer(cfg.hidden_dim, cfg.latent_dim, rng);
  m.sage = make_sage_layer(cfg.latent_dim, cfg.latent_dim, rng);
  m.mu_head = make_gat_layer(cfg.latent_dim, cfg.latent_dim, rng);
  m.logvar_head = make_gat_layer(cfg.latent_dim, cfg.latent_dim, rng);
  m.dec1 = make_linear_layer(cfg.latent_dim, cfg.latent_dim, rng);
  m.dec2 = make_linear_layer(cfg.latent_dim, cfg.latent_dim, rng);
  return m;
}

std::vector<Model::Named> Model::parameters(bool include_decoder) {
  std::vector<Named> out{
      {"gcn1.weight", &gcn1.weight},        {"gcn2.weight", &gcn2.weight},
      {"sage.weight", &sage.weight},        {"sage.bias", &sage.bias},
      {"mu.weight", &mu_head.weight},       {"mu.attention", &mu_head.attention},
      {"logvar.weight", &logvar_head.weight}, {"logvar.attention", &logvar_head.attention},
  };
  if (include_decoder) {
    out.push_back({"dec1.weight", &dec1.weight});
    out.push_back({"dec1.bias", &dec1.bias});
    out.push_back({"dec2.weight", &dec2.weight});
    out.push_back({"dec2.bias", &dec2.bias});
  }
  return out;
}

// ---------------------------------------------------------------------------

GraphContext GraphContext::build(const Graph& g) {
  GraphContext ctx;
  ctx.a_hat = normalize_adjacency(g);
  const Matrix& x = g.features();
  const Index nnz = (x.array() != 0.0).count();
  // Sparse products pay off once most entries are zero.
  if (x.size() > 0 && static_cast<double>(nnz) < 0.1 * static_cast<double>(x.size())) {
    ctx.sparse_features = x.sparseView();
  }
  ctx.dense_features = Tensor(x);
  return ctx;
}

namespace {

Tensor bind(ad::Tape* tape, const Matrix& m) { return tape ? tape->param(m) : Tensor(m); }

}  // namespace

Tensor encode(ad::Tape* tape, Model& model, const GraphContext& ctx) {
  Tensor w1 = bind(tape, model.gcn1.weight);
  Tensor h1 = ctx.sparse_features ? gcn_forward(w1, model.gcn1.relu, ctx.a_hat, *ctx.sparse_features)
                                  : gcn_forward(w1, model.gcn1.relu, ctx.a_hat, ctx.dense_features);
  return gcn_forward(bind(tape, model.gcn2.weight), model.gcn2.relu, ctx.a_hat, h1);
}

Matrix embed(Model& model, const Graph& g) {
  return encode(nullptr, model, GraphContext::build(g)).value();
}

OtSettings ot_settings(const TrainConfig& cfg, int threads, ot::PlanCache* cache) {
  OtSettings s;
  s.tau = cfg.tau;
  s.sinkhorn.eps = cfg.eps_sinkhorn;
  s.gw.sinkhorn.eps = cfg.eps_sinkhorn;
  s.gw.restarts = cfg.gw_restarts;
  s.threads = threads;
  s.cache = cache;
  return s;
}

namespace {

LossSettings loss_settings(const TrainConfig& cfg) {
  LossSettings s;
  s.contrast.alpha = cfg.alpha;
  s.contrast.tau = cfg.tau;
  s.contrast.include_positive = cfg.denominator_includes_positive;
  s.beta = cfg.beta;
  s.sigma = cfg.sigma;
  s.ablation = cfg.ablation;
  return s;
}

Matrix gaussian_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

// Inverted dropout mask: kept entries scaled by 1 / (1 - rate).
Matrix dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  }
  return m;
}

}  // namespace

StepOutput forward_step(ad::Tape& tape, Model& model, const Graph& g, const GraphContext& ctx,
                        const TrainConfig& cfg, int epoch, DistanceProvider& provider) {
  const AblationModifier mod = ablation_variant(cfg.ablation);
  const auto epoch_key = static_cast<std::uint64_t>(epoch);
  Rng sample_rng = make_rng(cfg.seed, Stream::kSampling, epoch_key);
  Rng noise_rng = make_rng(cfg.seed, Stream::kNoise, epoch_key);

  Tensor h = encode(&tape, model, ctx);
  const std::vector<NodeId> centers = sample_node_set(g.n_nodes(), cfg.s_size, sample_rng);

  StepOutput out;
  SubgraphBatch& batch = out.batch;
  for (NodeId c : centers) {
    Subgraph sub = bfs_subgraph(g, c, cfg.k);
    const std::vector<Index> rows = sub.index_map();
    Tensor x = ad::gather_rows(h, rows);
    Tensor z = sage_forward(tape, model.sage, sub.local_adj, x);
    Tensor mu = gat_forward(tape, model.mu_head, sub.local_adj, z);
    Tensor logvar = gat_forward(tape, model.logvar_head, sub.local_adj, z);
    Tensor x_tilde = gaussian_reparam(mu, logvar, gaussian_matrix(mu.rows(), mu.cols(), noise_rng), cfg.sigma);
    if (mod.dropout_rate > 0.0) {
      x_tilde = ad::mul(x_tilde, Tensor(dropout_mask(x_tilde.rows(), x_tilde.cols(), mod.dropout_rate, noise_rng)));
    }
    if (mod.use_decoder) {
      x_tilde = linear_forward(tape, model.dec2, ad::relu(linear_forward(tape, model.dec1, x_tilde)));
    }

    if (cfg.gw_metric == StructureMode::kFeatureWeighted) {
      batch.structure_original.push_back(structure_matrix(sub, x, cfg.gw_metric).distances);
      batch.structure_embedded.push_back(structure_matrix(sub, x_tilde, cfg.gw_metric).distances);
    } else {
      Tensor d = structure_matrix(sub, std::nullopt, cfg.gw_metric).distances;
      batch.structure_original.push_back(d);
      batch.structure_embedded.push_back(d);
    }
    batch.subgraphs.push_back(std::move(sub));
    batch.original.push_back(x);
    batch.embedded.push_back(x_tilde);
    batch.mu.push_back(mu);
    batch.logvar.push_back(logvar);
  }
  out.loss = total_loss(batch, provider, loss_settings(cfg));
  return out;
}

// ---------------------------------------------------------------------------

RunReport train(const Graph& g, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  Model model = Model::init(g.n_features(), cfg);
  return train(g, cfg, model, opts);
}

RunReport train(const Graph& g, const TrainConfig& cfg, Model& model, const TrainOptions& opts) {
  cfg.validate();
  if (g.n_nodes() < 2) throw std::invalid_argument("train: graph needs at least 2 nodes");
  if (model.gcn1.weight.rows() != g.n_features()) {
    throw ShapeError(fmt::format("train: model expects {} input features, graph has {}", model.gcn1.weight.rows(),
                                 g.n_features()));
  }
  const auto start = std::chrono::steady_clock::now();
  const GraphContext ctx = GraphContext::build(g);
  const AblationModifier mod = ablation_variant(cfg.ablation);
  auto params = model.parameters(mod.use_decoder);
  std::vector<Matrix*> values;
  for (auto& p : params) values.push_back(p.value);

  RunReport report;
  report.config = cfg;
  AdamState adam;
  OtDistanceProvider provider(ot_settings(cfg, opts.threads));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    StepRecord rec;
    try {
      ad::Tape tape;
      StepOutput step = forward_step(tape, model, g, ctx, cfg, epoch, provider);
      rec = {step.loss.l_w.item(), step.loss.l_gw.item(), step.loss.kl.item(), step.loss.recon.item(),
             step.loss.total.item()};
      if (!std::isfinite(rec.total)) throw NumericError("non-finite loss");
      tape.backward(step.loss.total);
      std::vector<Matrix> grads;
      for (Matrix* v : values) grads.push_back(tape.grad_of(*v));
      adam_step(adam, values, grads, cfg.lr);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("epoch {}: {}", epoch, e.what()));
    }
    report.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(epoch, rec);
  }
  report.embeddings = encode(nullptr, model, ctx).value();
  if (opts.probe) report.accuracy = evaluate_embeddings(report.embeddings, g, cfg.probe_repeats, cfg.seed);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

EvalResult evaluate(const Graph& g, const TrainConfig& cfg, int n_repeats, const TrainOptions& opts) {
  if (n_repeats < 1) throw std::invalid_argument("evaluate: n_repeats must be >= 1");
  TrainOptions no_probe = opts;
  no_probe.probe = false;
  RunReport r = train(g, cfg, no_probe);
  return evaluate_embeddings(r.embeddings, g, n_repeats, cfg.seed);
}

}  // namespace sgec
