#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgec/graph.hpp"
#include "sgec/layers.hpp"
#include "sgec/objective.hpp"
#include "sgec/sampler.hpp"

namespace sgec {

struct TrainConfig {
  double alpha = 0.5;
  double beta = 1e-3;
  double tau = 0.5;
  Index k = 15;
  Index s_size = 16;
  double eps_sinkhorn = 0.05;
  double lr = 1e-3;
  int epochs = 300;
  std::uint64_t seed = 0;
  Index hidden_dim = 256;
  Index latent_dim = 128;
  StructureMode gw_metric = StructureMode::kFeatureWeighted;
  AblationMode ablation = AblationMode::kNone;
  SigmaConvention sigma = SigmaConvention::kHalf;
  bool denominator_includes_positive = false;
  int gw_restarts = 1;
  int probe_repeats = 5;

  // Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
// Unknown keys and ill-typed values are rejected; missing keys keep `base`.
TrainConfig config_from_json(const nlohmann::json& j, const TrainConfig& base = {});
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = {});

std::string to_string(StructureMode mode);
StructureMode parse_structure_mode(std::string_view name);
std::string to_string(SigmaConvention c);
SigmaConvention parse_sigma_convention(std::string_view name);

// All trainable state. Decoder layers exist in every model but are only
// optimized under the decoder ablation.
struct Model {
  GcnLayer gcn1;
  GcnLayer gcn2;
  SageLayer sage;
  GatLayer mu_head;
  GatLayer logvar_head;
  LinearLayer dec1;
  LinearLayer dec2;

  static Model init(Index in_dim, const TrainConfig& cfg);

  struct Named {
    std::string name;
    Matrix* value;
  };
  std::vector<Named> parameters(bool include_decoder);
  std::vector<Named> all_parameters() { return parameters(true); }
};

void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainConfig& cfg);
std::pair<Model, TrainConfig> load_checkpoint(const std::filesystem::path& path);

// Graph-level constants reused by every step.
struct GraphContext {
  SparseMatrix a_hat;
  std::optional<SparseMatrix> sparse_features;  // set when the features are mostly zero
  ad::Tensor dense_features;

  static GraphContext build(const Graph& g);
};

// Encoder output H_2 for every node (the probed representation).
ad::Tensor encode(ad::Tape* tape, Model& model, const GraphContext& ctx);
Matrix embed(Model& model, const Graph& g);

struct StepRecord {
  double l_w = 0.0;
  double l_gw = 0.0;
  double kl = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

struct StepOutput {
  LossBreakdown loss;
  SubgraphBatch batch;
};

// Forward pass of one training step for `epoch` on `tape`: encode, sample,
// embed subgraphs, assemble the loss. Randomness is drawn from the sampling
// and noise streams keyed by the epoch.
StepOutput forward_step(ad::Tape& tape, Model& model, const Graph& g, const GraphContext& ctx,
                        const TrainConfig& cfg, int epoch, DistanceProvider& provider);

OtSettings ot_settings(const TrainConfig& cfg, int threads, ot::PlanCache* cache = nullptr);

struct ProbeResult {
  double val_accuracy = 0.0;   // percent
  double test_accuracy = 0.0;  // percent
  int steps = 0;
};

struct ProbeOptions {
  double lr = 0.01;
  int patience = 50;
  int max_steps = 2000;
};

// Softmax regression on frozen embeddings, trained on the train split with
// Adam, early-stopped on validation accuracy; reports the accuracies of the
// best-validation weights.
ProbeResult linear_probe(const Matrix& embeddings, const Graph& g, std::uint64_t probe_seed,
                         const ProbeOptions& opts = {});

struct EvalResult {
  double test_mean = 0.0;
  double test_std = 0.0;  // sample std over probe repeats; 0 for one repeat
  double val_mean = 0.0;
  double val_std = 0.0;
  std::vector<ProbeResult> repeats;
};

// Repeats linear_probe with probe seeds derived from `seed` and repeat index.
EvalResult evaluate_embeddings(const Matrix& embeddings, const Graph& g, int n_repeats, std::uint64_t seed);

struct RunReport {
  TrainConfig config;
  std::vector<StepRecord> history;
  Matrix embeddings;
  EvalResult accuracy;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  int threads = 1;
  bool probe = true;
  // Called after each epoch with its record; for progress logging.
  std::function<void(int, const StepRecord&)> on_epoch;
};

// Full training run; deterministic given (g, cfg).
RunReport train(const Graph& g, const TrainConfig& cfg, const TrainOptions& opts = {});
RunReport train(const Graph& g, const TrainConfig& cfg, Model& model, const TrainOptions& opts = {});

// Trains and probes with cfg.probe_repeats (at least n_repeats when given).
EvalResult evaluate(const Graph& g, const TrainConfig& cfg, int n_repeats, const TrainOptions& opts = {});

// Everything but wall-clock time; byte-stable for fixed inputs.
nlohmann::ordered_json report_json(const RunReport& r);
nlohmann::ordered_json timing_json(const RunReport& r);

struct SearchRanges {
  double lr_min = 1e-4;
  double lr_max = 1e-2;
  double alpha_min = 0.0;
  double alpha_max = 1.0;
  double beta_min = 1e-6;
  double beta_max = 1e2;

  void validate() const;
};

struct TrialRecord {
  int index = 0;
  TrainConfig config;
  double score = 0.0;
};

struct SearchResult {
  TrainConfig best;
  int best_index = 0;
  std::vector<TrialRecord> trials;
};

using TrialScorer = std::function<double(const TrainConfig&)>;

// Samples lr and beta log-uniformly and alpha uniformly, scores each trial,
// and returns the highest score; ties keep the earlier trial. The default
// scorer trains and returns validation probe accuracy.
SearchResult random_search(const Graph& g, const TrainConfig& base, const SearchRanges& ranges, int trials,
                           std::uint64_t seed, TrialScorer scorer = {}, const TrainOptions& opts = {});

nlohmann::ordered_json search_json(const SearchResult& r);

}  // namespace sgec
