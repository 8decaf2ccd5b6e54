#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "sgec/autodiff.hpp"
#include "sgec/layers.hpp"
#include "sgec/ot.hpp"
#include "sgec/sampler.hpp"

namespace sgec {

// Per-step collection of original and embedded subgraph views.
struct SubgraphBatch {
  std::vector<Subgraph> subgraphs;
  std::vector<ad::Tensor> original;  // X^i, k_i x C
  std::vector<ad::Tensor> embedded;  // X~^i, k_i x C
  std::vector<ad::Tensor> mu;
  std::vector<ad::Tensor> logvar;
  std::vector<ad::Tensor> structure_original;  // from A^i (and X^i in feature-weighted mode)
  std::vector<ad::Tensor> structure_embedded;  // from A^i (and X~^i in feature-weighted mode)

  std::size_t size() const { return original.size(); }
  // Throws ShapeError if any per-subgraph list disagrees in length or shape.
  void validate() const;
};

// Distances feeding one InfoNCE term. cross(i, j) compares the original view
// of i with the embedded view of j, so the diagonal holds the positives;
// original(i, j) compares original views (diagonal unused).
struct PairDistances {
  ad::Tensor cross;
  ad::Tensor original;
};

class DistanceProvider {
 public:
  virtual ~DistanceProvider() = default;
  virtual PairDistances wasserstein(const SubgraphBatch& batch) = 0;
  virtual PairDistances gromov_wasserstein(const SubgraphBatch& batch) = 0;
};

struct OtSettings {
  double tau = 0.5;
  ot::SinkhornOptions sinkhorn{};
  ot::GwOptions gw{};
  int threads = 1;
  ot::PlanCache* cache = nullptr;
};

// Solves every pairwise transport problem in the batch.
class OtDistanceProvider : public DistanceProvider {
 public:
  explicit OtDistanceProvider(OtSettings settings) : settings_(settings) {}
  PairDistances wasserstein(const SubgraphBatch& batch) override;
  PairDistances gromov_wasserstein(const SubgraphBatch& batch) override;

 private:
  OtSettings settings_;
};

// Returns fixed distance matrices regardless of the batch.
class FixedDistanceProvider : public DistanceProvider {
 public:
  FixedDistanceProvider(PairDistances w, PairDistances gw) : w_(std::move(w)), gw_(std::move(gw)) {}
  PairDistances wasserstein(const SubgraphBatch&) override { return w_; }
  PairDistances gromov_wasserstein(const SubgraphBatch&) override { return gw_; }

 private:
  PairDistances w_;
  PairDistances gw_;
};

// sum_i -log( exp(-cross_ii / tau) / Z_i ) with
// Z_i = sum_{j != i} [exp(-cross_ij / tau) + exp(-original_ij / tau)], plus
// exp(-cross_ii / tau) when include_positive. Max-shifted per row.
ad::Tensor info_nce(const PairDistances& d, double tau, bool include_positive);

struct ContrastSettings {
  double alpha = 0.5;
  double tau = 0.5;
  bool include_positive = false;
};

// alpha * InfoNCE over Wasserstein distances; exactly 0 when alpha == 0.
ad::Tensor loss_w(const SubgraphBatch& batch, DistanceProvider& provider, const ContrastSettings& s);
// (1 - alpha) * InfoNCE over Gromov-Wasserstein distances; exactly 0 when alpha == 1.
ad::Tensor loss_gw(const SubgraphBatch& batch, DistanceProvider& provider, const ContrastSettings& s);

// (1/|P|) sum over all nodes and dimensions of mu^2 + sigma^2 - 1 - 2 log sigma,
// with sigma taken from logvar under `convention`.
ad::Tensor kl_term(std::span<const ad::Tensor> mu, std::span<const ad::Tensor> logvar,
                   SigmaConvention convention);
ad::Tensor kl_term(const SubgraphBatch& batch, SigmaConvention convention);

enum class AblationMode { kNone, kNoReg, kDecoder, kRecon, kDropout };

AblationMode parse_ablation(std::string_view name);
std::string to_string(AblationMode mode);

// How an ablation mode changes loss assembly.
struct AblationModifier {
  double beta_scale = 1.0;
  bool use_decoder = false;   // X~ -> FC(relu(FC(X~))) before the contrastive terms
  bool add_recon = false;     // + mean_i ||X^i - X~^i||_1
  double dropout_rate = 0.0;  // inverted dropout on X~, training only
};

AblationModifier ablation_variant(AblationMode mode);

struct LossSettings {
  ContrastSettings contrast{};
  double beta = 1e-3;
  SigmaConvention sigma = SigmaConvention::kHalf;
  AblationMode ablation = AblationMode::kNone;
};

struct LossBreakdown {
  ad::Tensor l_w;
  ad::Tensor l_gw;
  ad::Tensor kl;     // reported unweighted
  ad::Tensor recon;  // 0 unless the recon ablation is active
  ad::Tensor total;  // l_w + l_gw + beta_eff * kl + recon
  double beta_effective = 0.0;
};

// mean over subgraphs of the entrywise l1 distance between X^i and X~^i.
ad::Tensor reconstruction_l1(const SubgraphBatch& batch);

LossBreakdown total_loss(const SubgraphBatch& batch, DistanceProvider& provider, const LossSettings& s);

}  // namespace sgec
