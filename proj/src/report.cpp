#include <cmath>

#include <fmt/format.h>

#include "sgec/pipeline.hpp"

namespace sgec {

using nlohmann::ordered_json;

namespace {

constexpr int kReportSchemaVersion = 1;

ordered_json eval_json(const EvalResult& e) {
  ordered_json j;
  j["std_kind"] = "probe-repeat";
  j["test_mean"] = e.test_mean;
  j["test_std"] = e.test_std;
  j["val_mean"] = e.val_mean;
  j["val_std"] = e.val_std;
  ordered_json reps = ordered_json::array();
  for (const auto& r : e.repeats) {
    reps.push_back({{"val", r.val_accuracy}, {"test", r.test_accuracy}, {"steps", r.steps}});
  }
  j["repeats"] = std::move(reps);
  return j;
}

}  // namespace

ordered_json report_json(const RunReport& r) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = to_json(r.config);
  ordered_json hist = ordered_json::array();
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    const StepRecord& s = r.history[e];
    hist.push_back({{"epoch", e}, {"l_w", s.l_w}, {"l_gw", s.l_gw}, {"kl", s.kl}, {"recon", s.recon},
                    {"total", s.total}});
  }
  j["history"] = std::move(hist);
  j["embedding_shape"] = {r.embeddings.rows(), r.embeddings.cols()};
  j["accuracy"] = eval_json(r.accuracy);
  return j;
}

ordered_json timing_json(const RunReport& r) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

// ---------------------------------------------------------------------------

void SearchRanges::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("search ranges: " + msg); };
  if (!(lr_min > 0.0 && lr_min <= lr_max && std::isfinite(lr_max))) {
    fail(fmt::format("lr range [{}, {}] must be positive and ordered", lr_min, lr_max));
  }
  if (!(alpha_min >= 0.0 && alpha_min <= alpha_max && alpha_max <= 1.0)) {
    fail(fmt::format("alpha range [{}, {}] must be ordered within [0, 1]", alpha_min, alpha_max));
  }
  if (!(beta_min > 0.0 && beta_min <= beta_max && std::isfinite(beta_max))) {
    fail(fmt::format("beta range [{}, {}] must be positive and ordered", beta_min, beta_max));
  }
}

SearchResult random_search(const Graph& g, const TrainConfig& base, const SearchRanges& ranges, int trials,
                           std::uint64_t seed, TrialScorer scorer, const TrainOptions& opts) {
  ranges.validate();
  base.validate();
  if (trials < 1) throw std::invalid_argument("random_search: trials must be >= 1");
  if (!scorer) {
    scorer = [&g, &opts](const TrainConfig& cfg) { return train(g, cfg, opts).accuracy.val_mean; };
  }
  Rng rng = make_rng(seed, Stream::kSearch);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) {
    return std::exp(std::log(lo) + unit(rng) * (std::log(hi) - std::log(lo)));
  };

  SearchResult out;
  for (int t = 0; t < trials; ++t) {
    TrialRecord rec;
    rec.index = t;
    rec.config = base;
    rec.config.lr = log_uniform(ranges.lr_min, ranges.lr_max);
    rec.config.alpha = ranges.alpha_min + unit(rng) * (ranges.alpha_max - ranges.alpha_min);
    rec.config.beta = log_uniform(ranges.beta_min, ranges.beta_max);
    rec.score = scorer(rec.config);
    if (t == 0 || rec.score > out.trials[static_cast<std::size_t>(out.best_index)].score) out.best_index = t;
    out.trials.push_back(rec);
  }
  out.best = out.trials[static_cast<std::size_t>(out.best_index)].config;
  return out;
}

ordered_json search_json(const SearchResult& r) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["best_index"] = r.best_index;
  j["best_config"] = to_json(r.best);
  ordered_json log = ordered_json::array();
  for (const auto& t : r.trials) {
    log.push_back({{"trial", t.index},
                   {"lr", t.config.lr},
                   {"alpha", t.config.alpha},
                   {"beta", t.config.beta},
                   {"score", t.score}});
  }
  j["trials"] = std::move(log);
  return j;
}

}  // namespace sgec
