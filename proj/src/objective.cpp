#include "sgec/objective.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace sgec {

using ad::Tensor;

void SubgraphBatch::validate() const {
  const std::size_t s = original.size();
  if (embedded.size() != s || mu.size() != s || logvar.size() != s || subgraphs.size() != s ||
      structure_original.size() != s || structure_embedded.size() != s) {
    throw ShapeError("SubgraphBatch: per-subgraph lists differ in length");
  }
  for (std::size_t i = 0; i < s; ++i) {
    const Index k = subgraphs[i].size();
    if (original[i].rows() != k || embedded[i].rows() != k || original[i].cols() != embedded[i].cols()) {
      throw ShapeError(fmt::format("SubgraphBatch: views of subgraph {} are {}x{} and {}x{} for {} nodes", i,
                                   original[i].rows(), original[i].cols(), embedded[i].rows(),
                                   embedded[i].cols(), k));
    }
    if (structure_original[i].rows() != k || structure_embedded[i].rows() != k) {
      throw ShapeError(fmt::format("SubgraphBatch: structure matrices of subgraph {} do not match {} nodes", i, k));
    }
  }
}

// ---------------------------------------------------------------------------

PairDistances OtDistanceProvider::wasserstein(const SubgraphBatch& batch) {
  const ot::PairwiseOptions run{settings_.threads, settings_.cache};
  return {ot::pairwise_wasserstein(batch.original, batch.embedded, ot::PairSet::kAll, settings_.tau,
                                   settings_.sinkhorn, run),
          ot::pairwise_wasserstein(batch.original, {}, ot::PairSet::kSymmetric, settings_.tau,
                                   settings_.sinkhorn, run)};
}

PairDistances OtDistanceProvider::gromov_wasserstein(const SubgraphBatch& batch) {
  const ot::PairwiseOptions run{settings_.threads, settings_.cache};
  return {ot::pairwise_gromov_wasserstein(batch.structure_original, batch.structure_embedded,
                                          ot::PairSet::kAll, settings_.gw, run),
          ot::pairwise_gromov_wasserstein(batch.structure_original, {}, ot::PairSet::kSymmetric,
                                          settings_.gw, run)};
}

// ---------------------------------------------------------------------------

Tensor info_nce(const PairDistances& d, double tau, bool include_positive) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
  const Index s = d.cross.rows();
  if (s < 2) throw std::invalid_argument(fmt::format("info_nce: needs at least 2 subgraphs, got {}", s));
  if (d.cross.cols() != s || d.original.rows() != s || d.original.cols() != s) {
    throw ShapeError(fmt::format("info_nce: distance matrices {}x{} and {}x{} must be {}x{}", d.cross.rows(),
                                 d.cross.cols(), d.original.rows(), d.original.cols(), s, s));
  }
  const Matrix& cross = d.cross.value();
  const Matrix& orig = d.original.value();

  // Softmax weights over each row's denominator terms, laid out as [cross | original].
  Matrix weights = Matrix::Zero(s, 2 * s);
  double total = 0.0;
  for (Index i = 0; i < s; ++i) {
    double shift = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < s; ++j) {
      if (j != i || include_positive) shift = std::max(shift, -cross(i, j) / tau);
      if (j != i) shift = std::max(shift, -orig(i, j) / tau);
    }
    double z = 0.0;
    for (Index j = 0; j < s; ++j) {
      if (j != i || include_positive) z += (weights(i, j) = std::exp(-cross(i, j) / tau - shift));
      if (j != i) z += (weights(i, s + j) = std::exp(-orig(i, j) / tau - shift));
    }
    weights.row(i) /= z;
    total += cross(i, i) / tau + shift + std::log(z);
  }

  Matrix value(1, 1);
  value(0, 0) = total;
  const Tensor cross_t = d.cross;
  const Tensor orig_t = d.original;
  auto backward = [cross_t, orig_t, weights = std::move(weights), tau, s](const Matrix& g) {
    const double scale = g(0, 0) / tau;
    Matrix d_cross = -scale * weights.leftCols(s);
    d_cross.diagonal().array() += scale;
    cross_t.accumulate(d_cross);
    orig_t.accumulate(-scale * weights.rightCols(s));
  };
  return ad::make_result("info_nce", std::move(value), {&d.cross, &d.original}, std::move(backward));
}

Tensor loss_w(const SubgraphBatch& batch, DistanceProvider& provider, const ContrastSettings& s) {
  if (batch.size() < 2) throw std::invalid_argument("loss_w: needs at least 2 subgraphs");
  if (s.alpha == 0.0) return Tensor::scalar(0.0);
  return ad::scale(info_nce(provider.wasserstein(batch), s.tau, s.include_positive), s.alpha);
}

Tensor loss_gw(const SubgraphBatch& batch, DistanceProvider& provider, const ContrastSettings& s) {
  if (batch.size() < 2) throw std::invalid_argument("loss_gw: needs at least 2 subgraphs");
  if (s.alpha == 1.0) return Tensor::scalar(0.0);
  return ad::scale(info_nce(provider.gromov_wasserstein(batch), s.tau, s.include_positive), 1.0 - s.alpha);
}

Tensor kl_term(std::span<const Tensor> mu, std::span<const Tensor> logvar, SigmaConvention convention) {
  if (mu.size() != logvar.size() || mu.empty()) {
    throw ShapeError("kl_term: mu and logvar lists must be non-empty and equal in length");
  }
  // sigma^2 = exp(lv_eff) and 2 log sigma = lv_eff.
  const double c = convention == SigmaConvention::kHalf ? 1.0 : 2.0;
  Index n_nodes = 0;
  Tensor acc;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu[i].rows() != logvar[i].rows() || mu[i].cols() != logvar[i].cols()) {
      throw ShapeError(fmt::format("kl_term: mu {}x{} vs logvar {}x{}", mu[i].rows(), mu[i].cols(),
                                   logvar[i].rows(), logvar[i].cols()));
    }
    n_nodes += mu[i].rows();
    Tensor lv = ad::scale(logvar[i], c);
    Tensor terms = ad::sub(ad::add(ad::mul(mu[i], mu[i]), ad::exp(lv)), ad::add_scalar(lv, 1.0));
    Tensor part = ad::sum(terms);
    acc = acc.defined() ? ad::add(acc, part) : part;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(n_nodes));
}

Tensor kl_term(const SubgraphBatch& batch, SigmaConvention convention) {
  return kl_term(batch.mu, batch.logvar, convention);
}

AblationMode parse_ablation(std::string_view name) {
  if (name == "none") return AblationMode::kNone;
  if (name == "no-reg") return AblationMode::kNoReg;
  if (name == "decoder") return AblationMode::kDecoder;
  if (name == "recon") return AblationMode::kRecon;
  if (name == "dropout") return AblationMode::kDropout;
  throw std::invalid_argument(
      fmt::format("unknown ablation mode '{}' (expected none, no-reg, decoder, recon, dropout)", name));
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::kNone: return "none";
    case AblationMode::kNoReg: return "no-reg";
    case AblationMode::kDecoder: return "decoder";
    case AblationMode::kRecon: return "recon";
    case AblationMode::kDropout: return "dropout";
  }
  throw std::invalid_argument("invalid ablation mode");
}

AblationModifier ablation_variant(AblationMode mode) {
  AblationModifier m;
  switch (mode) {
    case AblationMode::kNone:
      break;
    case AblationMode::kNoReg:
      m.beta_scale = 0.0;
      break;
    case AblationMode::kDecoder:
      m.use_decoder = true;
      break;
    case AblationMode::kRecon:
      m.add_recon = true;
      break;
    case AblationMode::kDropout:
      m.beta_scale = 0.0;
      m.dropout_rate = 0.5;
      break;
    default:
      throw std::invalid_argument("invalid ablation mode");
  }
  return m;
}

Tensor reconstruction_l1(const SubgraphBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("reconstruction_l1: empty batch");
  Tensor acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor part = ad::sum(ad::abs(ad::sub(batch.original[i], batch.embedded[i])));
    acc = acc.defined() ? ad::add(acc, part) : part;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(batch.size()));
}

LossBreakdown total_loss(const SubgraphBatch& batch, DistanceProvider& provider, const LossSettings& s) {
  batch.validate();
  if (s.contrast.alpha < 0.0 || s.contrast.alpha > 1.0) {
    throw std::invalid_argument(fmt::format("total_loss: alpha {} outside [0, 1]", s.contrast.alpha));
  }
  if (s.beta < 0.0) throw std::invalid_argument(fmt::format("total_loss: beta {} is negative", s.beta));
  const AblationModifier mod = ablation_variant(s.ablation);

  LossBreakdown out;
  out.l_w = loss_w(batch, provider, s.contrast);
  out.l_gw = loss_gw(batch, provider, s.contrast);
  out.kl = kl_term(batch, s.sigma);
  out.beta_effective = s.beta * mod.beta_scale;
  out.recon = mod.add_recon ? reconstruction_l1(batch) : Tensor::scalar(0.0);

  Tensor total = ad::add(out.l_w, out.l_gw);
  if (out.beta_effective != 0.0) total = ad::add(total, ad::scale(out.kl, out.beta_effective));
  if (mod.add_recon) total = ad::add(total, out.recon);
  out.total = total;
  return out;
}

}  // namespace sgec
