// Acceptance runner: one PASS/FAIL line per primary criterion.
//
//   sgec_acceptance core   property suites and the toy SBM targets
//   sgec_acceptance cora   Cora targets; exits 77 when no Cora container is found
//
// Cora is looked up in $SGEC_CORA_DIR, then data/cora under the working directory.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "sgec/cli.hpp"
#include "sgec/layers.hpp"
#include "sgec/objective.hpp"
#include "sgec/ot.hpp"
#include "sgec/pipeline.hpp"

using namespace sgec;
using ad::Tape;
using ad::Tensor;

namespace {

constexpr int kExitSkip = 77;

// Pinned tolerances and budgets.
constexpr double kLayerFdTol = 1e-5;
constexpr double kEndToEndFdTol = 1e-4;
constexpr double kSuiteSeconds = 120.0;
constexpr double kOracleTol = 1e-2;
constexpr double kMarginalTol = 1e-6;
constexpr double kGwIdenticalTol = 1e-3;
constexpr double kKlTol = 1e-12;
constexpr double kInfoNceTol = 1e-5;
constexpr double kRatioTol = 1e-10;
constexpr double kToyAccuracyFloor = 90.0;
constexpr double kToySeconds = 300.0;
constexpr double kCoraAccuracyFloor = 75.0;
constexpr double kCoraSearchSeconds = 3600.0;
constexpr int kCoraTrials = 20;
// Reference value of the injected two-subgraph case: 0.6 + ln(e^-1.8 + e^-2.2).
constexpr double kHandInfoNce = -0.6869847476000476;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Runner {
 public:
  void check(const std::string& name, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << fmt::format("{} {} ({}; {:.1f}s)", o.pass ? "PASS" : "FAIL", name, o.detail, secs) << std::endl;
    failures_ += o.pass ? 0 : 1;
  }

  static void note(const std::string& text) { std::cout << "INFO " << text << std::endl; }

  int exit_code() const { return failures_ == 0 ? 0 : 1; }

 private:
  int failures_ = 0;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Tensor project(const Tensor& t, std::uint64_t seed) {
  return ad::sum(ad::mul(t, Tensor(test::random_matrix(t.rows(), t.cols(), seed))));
}

Neighborhoods random_neighborhoods(Index k, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution edge(0.4);
  Neighborhoods nbrs(static_cast<std::size_t>(k));
  for (Index u = 0; u < k; ++u) {
    for (Index v = u + 1; v < k; ++v) {
      if (edge(rng)) {
        nbrs[static_cast<std::size_t>(u)].push_back(v);
        nbrs[static_cast<std::size_t>(v)].push_back(u);
      }
    }
  }
  return nbrs;
}

double max_marginal_violation(const Matrix& plan, const Vector& u, const Vector& v) {
  return std::max((plan.rowwise().sum() - u).cwiseAbs().maxCoeff(),
                  (plan.colwise().sum().transpose() - v).cwiseAbs().maxCoeff());
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  double layer_worst = 0.0;
  int layer_checks = 0;
  auto record = [&](double err) {
    layer_worst = std::max(layer_worst, err);
    ++layer_checks;
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = gen_sbm({.n_per_block = 4, .blocks = 2, .p_in = 0.6, .p_out = 0.2, .seed = seed});
    const SparseMatrix a_hat = normalize_adjacency(g);
    const Matrix x = test::random_matrix(8, 3, seed + 1);
    const Neighborhoods nbrs = random_neighborhoods(6, seed + 2);
    const Matrix xs = test::random_matrix(6, 3, seed + 3);

    for (bool relu : {false, true}) {
      record(ad::finite_diff_check(
          [&](Tape&, std::span<const Tensor> in) { return project(gcn_forward(in[0], relu, a_hat, in[1]), seed); },
          std::vector<Matrix>{test::random_away_from_zero(3, 4, seed + 4), x}));
    }
    record(ad::finite_diff_check(
        [&](Tape&, std::span<const Tensor> in) {
          return project(sage_forward(in[0], in[1], nbrs, in[2]), seed);
        },
        std::vector<Matrix>{test::random_matrix(3, 4, seed + 5), test::random_matrix(1, 4, seed + 6), xs}));
    record(ad::finite_diff_check(
        [&](Tape&, std::span<const Tensor> in) {
          return project(gat_forward(in[0], in[1], 0.2, nbrs, in[2]), seed);
        },
        std::vector<Matrix>{test::random_matrix(3, 4, seed + 7), test::random_matrix(1, 8, seed + 8), xs}));
    record(ad::finite_diff_check(
        [&](Tape&, std::span<const Tensor> in) { return project(linear_forward(in[0], in[1], in[2]), seed); },
        std::vector<Matrix>{test::random_matrix(3, 4, seed + 9), test::random_matrix(1, 4, seed + 10), xs}));
    const Matrix noise = test::random_matrix(6, 3, seed + 11);
    for (auto conv : {SigmaConvention::kHalf, SigmaConvention::kLiteral}) {
      record(ad::finite_diff_check(
          [&](Tape&, std::span<const Tensor> in) {
            return project(gaussian_reparam(in[0], in[1], noise, conv), seed);
          },
          std::vector<Matrix>{test::random_matrix(6, 3, seed + 12), test::random_matrix(6, 3, seed + 13, -1.0, 1.0)}));
    }
  }

  double e2e_worst = 0.0;
  int e2e_checks = 0;
  for (std::uint64_t seed : {2, 7}) {
    const Graph g = gen_sbm({.n_per_block = 3, .blocks = 2, .p_in = 1.0, .p_out = 0.3, .seed = seed});
    TrainConfig cfg;
    cfg.hidden_dim = 4;
    cfg.latent_dim = 3;
    cfg.k = 3;
    cfg.s_size = 2;
    cfg.beta = 0.1;
    cfg.seed = seed;
    for (auto mode : {AblationMode::kNone, AblationMode::kDecoder, AblationMode::kRecon, AblationMode::kDropout}) {
      for (auto metric : {StructureMode::kFeatureWeighted, StructureMode::kHops}) {
        cfg.ablation = mode;
        cfg.gw_metric = metric;
        Model model = Model::init(g.n_features(), cfg);
        test::offset_biases(model, seed);
        e2e_worst = std::max(e2e_worst, test::envelope_gradient_error(g, model, cfg, 1e-6));
        ++e2e_checks;
      }
    }
  }
  const double secs = seconds_since(start);
  return {layer_worst < kLayerFdTol && e2e_worst < kEndToEndFdTol && secs < kSuiteSeconds,
          fmt::format("layers max rel err {:.2e} over {} checks (< {:.0e}); end-to-end {:.2e} over {} (< {:.0e}); "
                      "budget {:.0f}s",
                      layer_worst, layer_checks, kLayerFdTol, e2e_worst, e2e_checks, kEndToEndFdTol, kSuiteSeconds)};
}

Outcome ot_oracle_suite() {
  const auto start = std::chrono::steady_clock::now();
  ot::SinkhornOptions fine;
  fine.eps = 1e-3;
  fine.max_iter = 5000;

  double w_worst = 0.0;
  double marginal_worst = 0.0;
  int runs = 0;
  int unconverged = 0;
  for (Index k = 1; k <= 4; ++k) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix a = test::random_matrix(k, 3, 10 * static_cast<std::uint64_t>(k) + seed);
      const Matrix b = test::random_matrix(k, 3, 100 * static_cast<std::uint64_t>(k) + seed);
      const Matrix c = ot::cost_matrix(Tensor(a), Tensor(b), 0.5).values.value();
      w_worst = std::max(w_worst, std::abs(ot::wasserstein(Tensor(a), Tensor(b), 0.5, fine).item() -
                                           test::brute_force_assignment(c)));
      for (const ot::SinkhornOptions& opts : {fine, ot::SinkhornOptions{}}) {
        const ot::TransportPlan p = ot::sinkhorn(c, ot::uniform_marginal(k), ot::uniform_marginal(k), opts);
        ++runs;
        if (!p.converged) {
          ++unconverged;
          continue;
        }
        marginal_worst = std::max(marginal_worst, max_marginal_violation(p.coupling, p.u, p.v));
      }
    }
  }

  double gw_worst = 0.0;
  for (Index k = 1; k <= 4; ++k) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      for (bool hops : {true, false}) {
        const Matrix da = test::random_graph_metric(k, 31 * static_cast<std::uint64_t>(k) + seed, hops);
        const Matrix db = test::random_graph_metric(k, 57 * static_cast<std::uint64_t>(k) + seed + 1000, hops);
        const ot::GwResult r = ot::solve_gromov_wasserstein(da, db);
        gw_worst = std::max(gw_worst, std::abs(r.value - test::brute_force_gw(da, db)));
        marginal_worst =
            std::max(marginal_worst, max_marginal_violation(r.plan, ot::uniform_marginal(k), ot::uniform_marginal(k)));
      }
    }
  }

  double identical_worst = 0.0;
  for (Index k : {2, 5, 10, 15}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (bool hops : {true, false}) {
        const Matrix d = test::random_graph_metric(k, 7 * static_cast<std::uint64_t>(k) + seed, hops);
        identical_worst = std::max(identical_worst, ot::solve_gromov_wasserstein(d, d).value);
      }
    }
  }
  const double secs = seconds_since(start);
  const bool pass = w_worst < kOracleTol && gw_worst < kOracleTol && marginal_worst < kMarginalTol &&
                    unconverged == 0 && identical_worst <= kGwIdenticalTol && secs < kSuiteSeconds;
  return {pass, fmt::format("W vs oracle {:.2e} (eps 1e-3), GW vs oracle {:.2e} (< {:.0e}); marginals {:.2e} "
                            "(< {:.0e}), {} of {} Sinkhorn runs unconverged; GW(D, D) max {:.2e} (<= {:.0e}); "
                            "budget {:.0f}s",
                            w_worst, gw_worst, kOracleTol, marginal_worst, kMarginalTol, unconverged, runs,
                            identical_worst, kGwIdenticalTol, kSuiteSeconds)};
}

Outcome kl_closed_form() {
  auto kl1 = [](double mu, double lv, SigmaConvention conv) {
    const std::vector<Tensor> m{Tensor(Matrix::Constant(1, 1, mu))};
    const std::vector<Tensor> l{Tensor(Matrix::Constant(1, 1, lv))};
    return kl_term(m, l, conv).item();
  };
  const double e0 = std::abs(kl1(0.0, 0.0, SigmaConvention::kHalf));
  const double e1 = std::abs(kl1(1.0, 0.0, SigmaConvention::kHalf) - 1.0);
  const double e2 = std::abs(kl1(0.0, 2.0, SigmaConvention::kHalf) - (std::exp(2.0) - 3.0));
  const double e2_literal = std::abs(kl1(0.0, 1.0, SigmaConvention::kLiteral) - (std::exp(2.0) - 3.0));
  const double worst = std::max({e0, e1, e2, e2_literal});
  return {worst < kKlTol, fmt::format("cases 0, 1, e^2-3 max abs err {:.2e} (< {:.0e})", worst, kKlTol)};
}

Outcome info_nce_algebra() {
  Matrix cross(2, 2);
  cross << 0.3, 0.9, 0.9, 0.3;
  Matrix orig(2, 2);
  orig << 0.0, 1.1, 1.1, 0.0;
  const double hand = 0.6 + std::log(std::exp(-1.8) + std::exp(-2.2));
  const double got = info_nce({Tensor(cross), Tensor(orig)}, 0.5, false).item() / 2.0;
  const double hand_err = std::max(std::abs(got - hand), std::abs(got - kHandInfoNce));

  double ratio_worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix c = test::random_matrix(5, 5, seed, 0.0, 2.0);
    const Matrix o = test::random_matrix(5, 5, seed + 9, 0.0, 2.0);
    for (bool pos : {false, true}) {
      const double base = info_nce({Tensor(c), Tensor(o)}, 0.5, pos).item();
      for (double f : {0.1, 3.0, 17.0}) {
        ratio_worst =
            std::max(ratio_worst, std::abs(info_nce({Tensor(f * c), Tensor(f * o)}, 0.5 * f, pos).item() - base));
      }
    }
  }
  return {hand_err < kInfoNceTol && ratio_worst < kRatioTol,
          fmt::format("hand case {:.10f} vs {:.10f} (< {:.0e}); ratio invariance {:.2e} (< {:.0e})", got, hand,
                      kInfoNceTol, ratio_worst, kRatioTol)};
}

// ---------------------------------------------------------------------------

constexpr int kToyEpochs = 200;

Graph toy_graph() { return gen_sbm({}); }

TrainConfig toy_config(AblationMode mode = AblationMode::kNone) {
  TrainConfig cfg;
  cfg.epochs = kToyEpochs;
  cfg.ablation = mode;
  return cfg;
}

struct ToyRuns {
  RunReport none;
  RunReport no_reg;
  double none_seconds = 0.0;
};

Outcome toy_task(ToyRuns& runs) {
  const Graph g = toy_graph();
  const TrainConfig cfg = toy_config();
  const auto start = std::chrono::steady_clock::now();
  runs.none = train(g, cfg);
  runs.none_seconds = seconds_since(start);
  const RunReport& r = runs.none;
  const double first = r.history.front().total;
  const double last = r.history.back().total;
  const bool pass = g.n_nodes() == 200 && r.accuracy.test_mean >= kToyAccuracyFloor &&
                    last < first && runs.none_seconds < kToySeconds;
  return {pass, fmt::format("{} nodes, {} epochs: test accuracy {:.2f} +- {:.2f} (>= {:.0f}); loss {:.4f} -> {:.4f}; "
                            "budget {:.0f}s single-threaded",
                            g.n_nodes(), cfg.epochs, r.accuracy.test_mean, r.accuracy.test_std, kToyAccuracyFloor,
                            first, last, kToySeconds)};
}

Outcome ablation_direction(const RunReport& none, const RunReport& no_reg, const std::string& dataset) {
  const double bound = none.accuracy.test_mean + none.accuracy.test_std;
  return {no_reg.accuracy.test_mean <= bound,
          fmt::format("{}: no-reg {:.2f} <= none {:.2f} + std {:.2f}", dataset, no_reg.accuracy.test_mean,
                      none.accuracy.test_mean, none.accuracy.test_std)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const auto dir = test::scratch_dir("acceptance_determinism");
  const std::string data = (dir / "graph").string();
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "sgec");
    return cli::run(args, sink, sink);
  };
  if (run({"gen-sbm", "--out", data}) != cli::kExitOk) return {false, "gen-sbm failed"};
  for (const char* out : {"a", "b"}) {
    if (run({"train", "--data", data, "--out", (dir / out).string(), "--epochs", "20"}) != cli::kExitOk) {
      return {false, fmt::format("train {} failed: {}", out, sink.str())};
    }
  }
  auto history = [&](const char* out) {
    return nlohmann::json::parse(slurp(dir / out / "report.json"))["history"].dump();
  };
  const bool same_history = history("a") == history("b");
  const bool same_report = slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json");
  const bool same_embeddings =
      slurp(dir / "a" / "embeddings" / "features.tsv") == slurp(dir / "b" / "embeddings" / "features.tsv");
  const bool same_checkpoint = slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt");
  return {same_history && same_report && same_embeddings && same_checkpoint,
          fmt::format("two train invocations (toy SBM, 20 epochs): history {}, report {}, embeddings {}, "
                      "checkpoint {}",
                      same_history ? "identical" : "differs", same_report ? "identical" : "differs",
                      same_embeddings ? "identical" : "differs", same_checkpoint ? "identical" : "differs")};
}

// Probe accuracy after a few epochs against the untrained encoder.
void early_epochs_note() {
  int not_worse = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = gen_sbm({.seed = seed});
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 5;
    TrainConfig untrained = cfg;
    untrained.epochs = 0;
    if (train(g, cfg).accuracy.test_mean >= train(g, untrained).accuracy.test_mean) ++not_worse;
  }
  Runner::note(fmt::format("early-epochs property: trained >= untrained probe accuracy in {} of 10 seeds", not_worse));
}

int run_core() {
  Runner r;
  Runner::note(fmt::format("InfoNCE hand case 0.6 + ln(e^-1.8 + e^-2.2) = {:.10f}; the approximation 0.59994 does "
                           "not match this expression",
                           kHandInfoNce));
  r.check("gradient suite", gradient_suite);
  r.check("OT oracle suite", ot_oracle_suite);
  r.check("KL closed form", kl_closed_form);
  r.check("InfoNCE algebra", info_nce_algebra);
  ToyRuns runs;
  r.check("toy-task learning", [&] { return toy_task(runs); });
  r.check("ablation direction (toy SBM)", [&] {
    runs.no_reg = train(toy_graph(), toy_config(AblationMode::kNoReg));
    return ablation_direction(runs.none, runs.no_reg, "toy SBM");
  });
  r.check("determinism", determinism);
  early_epochs_note();
  return r.exit_code();
}

// ---------------------------------------------------------------------------

std::filesystem::path cora_dir() {
  if (const char* env = std::getenv("SGEC_CORA_DIR"); env != nullptr && *env != '\0') return env;
  return std::filesystem::path("data") / "cora";
}

int run_cora() {
  const auto dir = cora_dir();
  if (!std::filesystem::exists(dir / "meta.json")) {
    std::cout << "SKIP Cora criteria: no container at " << dir.string() << " (set SGEC_CORA_DIR)" << std::endl;
    return kExitSkip;
  }
  const Graph g = load_graph(dir);
  Runner r;
  const TrainConfig base;
  TrainConfig best = base;
  r.check("Cora desk-scale", [&] {
    const auto start = std::chrono::steady_clock::now();
    const SearchResult search = random_search(g, base, SearchRanges{}, kCoraTrials, base.seed);
    best = search.best;
    const RunReport rep = train(g, best);
    const double secs = seconds_since(start);
    return Outcome{rep.accuracy.test_mean >= kCoraAccuracyFloor && secs < kCoraSearchSeconds,
                   fmt::format("{}-trial search, best trial {}: test accuracy {:.2f} +- {:.2f} (>= {:.0f}); "
                               "budget {:.0f}s",
                               kCoraTrials, search.best_index, rep.accuracy.test_mean, rep.accuracy.test_std,
                               kCoraAccuracyFloor, kCoraSearchSeconds)};
  });
  r.check("beta trend", [&] {
    TrainConfig low = best;
    low.beta = 1e-3;
    TrainConfig high = best;
    high.beta = 1e2;
    const RunReport a = train(g, low);
    const RunReport b = train(g, high);
    return Outcome{a.accuracy.test_mean - b.accuracy.test_mean > a.accuracy.test_std,
                   fmt::format("beta 1e-3: {:.2f} +- {:.2f}; beta 1e2: {:.2f} +- {:.2f}", a.accuracy.test_mean,
                               a.accuracy.test_std, b.accuracy.test_mean, b.accuracy.test_std)};
  });
  r.check("ablation direction (Cora)", [&] {
    TrainConfig no_reg = best;
    no_reg.ablation = AblationMode::kNoReg;
    return ablation_direction(train(g, best), train(g, no_reg), "Cora");
  });
  return r.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "core";
  try {
    if (mode == "core") return run_core();
    if (mode == "cora") return run_cora();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  std::cerr << "usage: sgec_acceptance [core|cora]" << std::endl;
  return 2;
}
