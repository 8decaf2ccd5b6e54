#include "sgec/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "sgec/pipeline.hpp"

namespace sgec::cli {

namespace {

// Routes spdlog to `err` for the duration of one run.
class LogScope {
 public:
  explicit LogScope(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, /*force_flush=*/true);
    auto logger = std::make_shared<spdlog::logger>("sgec", sink);
    logger->set_pattern("[%l] %v");
    const char* level = std::getenv("SGEC_LOG_LEVEL");
    logger->set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
    spdlog::set_default_logger(logger);
  }
  ~LogScope() { spdlog::set_default_logger(previous_); }
  LogScope(const LogScope&) = delete;
  LogScope& operator=(const LogScope&) = delete;

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

// Command-line overrides for TrainConfig; only flags that were given apply.
struct ConfigFlags {
  double alpha = 0, beta = 0, tau = 0, eps_sinkhorn = 0, lr = 0;
  Index k = 0, s_size = 0, hidden_dim = 0, latent_dim = 0;
  int epochs = 0, gw_restarts = 0, probe_repeats = 0;
  std::uint64_t seed = 0;
  std::string gw_metric, ablation, sigma;
  bool include_positive = false;
  std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> setters;

  template <typename T>
  void add(CLI::App* app, const std::string& name, T& field, const std::string& help,
           std::function<void(TrainConfig&, const T&)> apply) {
    CLI::Option* opt = app->add_option(name, field, help);
    setters.emplace_back(opt, [&field, apply](TrainConfig& c) { apply(c, field); });
  }

  void attach(CLI::App* app) {
    add<double>(app, "--alpha", alpha, "Weight of the Wasserstein term in [0, 1]",
                [](TrainConfig& c, const double& v) { c.alpha = v; });
    add<double>(app, "--beta", beta, "KL weight", [](TrainConfig& c, const double& v) { c.beta = v; });
    add<double>(app, "--tau", tau, "InfoNCE and cost temperature", [](TrainConfig& c, const double& v) { c.tau = v; });
    add<Index>(app, "--k", k, "Subgraph size", [](TrainConfig& c, const Index& v) { c.k = v; });
    add<Index>(app, "--s-size", s_size, "Subgraphs sampled per epoch", [](TrainConfig& c, const Index& v) { c.s_size = v; });
    add<double>(app, "--eps-sinkhorn", eps_sinkhorn, "Entropic regularization",
                [](TrainConfig& c, const double& v) { c.eps_sinkhorn = v; });
    add<double>(app, "--lr", lr, "Adam learning rate", [](TrainConfig& c, const double& v) { c.lr = v; });
    add<int>(app, "--epochs", epochs, "Training epochs", [](TrainConfig& c, const int& v) { c.epochs = v; });
    add<std::uint64_t>(app, "--seed", seed, "Run seed", [](TrainConfig& c, const std::uint64_t& v) { c.seed = v; });
    add<Index>(app, "--hidden-dim", hidden_dim, "Width of the first encoder layer",
               [](TrainConfig& c, const Index& v) { c.hidden_dim = v; });
    add<Index>(app, "--latent-dim", latent_dim, "Embedding width",
               [](TrainConfig& c, const Index& v) { c.latent_dim = v; });
    add<std::string>(app, "--gw-metric", gw_metric, "Structure matrices: feature-weighted or hops",
                     [](TrainConfig& c, const std::string& v) { c.gw_metric = parse_structure_mode(v); });
    add<std::string>(app, "--ablation", ablation, "none, no-reg, decoder, recon or dropout",
                     [](TrainConfig& c, const std::string& v) { c.ablation = parse_ablation(v); });
    add<std::string>(app, "--sigma-convention", sigma, "half (sigma = exp(logvar/2)) or literal",
                     [](TrainConfig& c, const std::string& v) { c.sigma = parse_sigma_convention(v); });
    add<int>(app, "--gw-restarts", gw_restarts, "Gromov-Wasserstein solver starts",
             [](TrainConfig& c, const int& v) { c.gw_restarts = v; });
    add<int>(app, "--probe-repeats", probe_repeats, "Linear-probe repetitions",
             [](TrainConfig& c, const int& v) { c.probe_repeats = v; });
    CLI::Option* flag = app->add_flag("--denominator-includes-positive", include_positive,
                                      "Add the positive pair to the InfoNCE denominator");
    setters.emplace_back(flag, [this](TrainConfig& c) { c.denominator_includes_positive = include_positive; });
  }

  void apply(TrainConfig& cfg) const {
    for (const auto& [opt, set] : setters) {
      if (opt->count() > 0) set(cfg);
    }
  }
};

TrainConfig resolve_config(const std::string& config_path, const ConfigFlags& flags) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config(config_path);
  flags.apply(cfg);
  cfg.validate();
  return cfg;
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

// Container with the embeddings in place of the input features.
void write_embeddings(const Graph& g, const Matrix& emb, const std::filesystem::path& dir) {
  Graph out(g.n_nodes(), g.n_classes(), g.edges(), emb, g.labels(), g.splits());
  save_graph(out, dir);
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create directory {}: {}", dir.string(), ec.message()));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LogScope log_scope(err);

  CLI::App app{"Subgraph Gaussian embedding contrast: self-supervised node representations"};
  app.name(args.empty() ? "sgec" : args.front());
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for transport problems")->check(CLI::PositiveNumber);

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "Train on a graph container and write report and checkpoint");
  std::string data_dir, config_path, out_dir;
  ConfigFlags train_flags;
  train_cmd->add_option("--data", data_dir, "Graph container directory")->required();
  train_cmd->add_option("--config", config_path, "JSON config file; flags override its values");
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_flags.attach(train_cmd);

  // eval
  CLI::App* eval_cmd = app.add_subcommand("eval", "Probe the embeddings of a checkpoint");
  std::string eval_data, checkpoint;
  int repeats = 0;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--data", eval_data, "Graph container directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval_cmd->add_option("--repeats", repeats, "Probe repetitions (default: the checkpoint's probe_repeats)");
  CLI::Option* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "Probe seed (default: the run seed)");

  // embed
  CLI::App* embed_cmd = app.add_subcommand("embed", "Write checkpoint embeddings as a graph container");
  std::string embed_data, embed_ckpt, embed_out;
  embed_cmd->add_option("--data", embed_data, "Graph container directory")->required();
  embed_cmd->add_option("--checkpoint", embed_ckpt, "Checkpoint written by train")->required();
  embed_cmd->add_option("--out", embed_out, "Output container directory")->required();

  // tune
  CLI::App* tune_cmd = app.add_subcommand("tune", "Random search over lr, alpha and beta");
  std::string tune_data, tune_config, tune_out;
  int trials = 20;
  std::uint64_t search_seed = 0;
  SearchRanges ranges;
  ConfigFlags tune_flags;
  tune_cmd->add_option("--data", tune_data, "Graph container directory")->required();
  tune_cmd->add_option("--config", tune_config, "Base JSON config; flags override its values");
  tune_cmd->add_option("--out", tune_out, "Output directory")->required();
  tune_cmd->add_option("--trials", trials, "Number of sampled configurations")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--search-seed", search_seed, "Seed of the hyperparameter sampler");
  tune_cmd->add_option("--lr-min", ranges.lr_min, "Lower lr bound (log-uniform)");
  tune_cmd->add_option("--lr-max", ranges.lr_max, "Upper lr bound (log-uniform)");
  tune_cmd->add_option("--alpha-min", ranges.alpha_min, "Lower alpha bound (uniform)");
  tune_cmd->add_option("--alpha-max", ranges.alpha_max, "Upper alpha bound (uniform)");
  tune_cmd->add_option("--beta-min", ranges.beta_min, "Lower beta bound (log-uniform)");
  tune_cmd->add_option("--beta-max", ranges.beta_max, "Upper beta bound (log-uniform)");
  tune_flags.attach(tune_cmd);

  // gen-sbm
  CLI::App* sbm_cmd = app.add_subcommand("gen-sbm", "Write a synthetic stochastic block model container");
  std::string sbm_out;
  SbmParams sbm;
  sbm_cmd->add_option("--out", sbm_out, "Output container directory")->required();
  sbm_cmd->add_option("--n-per-block", sbm.n_per_block, "Nodes per block");
  sbm_cmd->add_option("--blocks", sbm.blocks, "Number of blocks (classes)");
  sbm_cmd->add_option("--p-in", sbm.p_in, "Edge probability inside a block");
  sbm_cmd->add_option("--p-out", sbm.p_out, "Edge probability across blocks");
  sbm_cmd->add_option("--noise-std", sbm.noise_std, "Std of the Gaussian feature noise");
  sbm_cmd->add_option("--seed", sbm.seed, "Generator seed");

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      const TrainConfig cfg = resolve_config(config_path, train_flags);
      const Graph g = load_graph(data_dir);
      ensure_dir(out_dir);
      spdlog::info("training {} epochs on {} nodes", cfg.epochs, g.n_nodes());
      TrainOptions opts;
      opts.threads = threads;
      opts.on_epoch = [&cfg](int epoch, const StepRecord& r) {
        if ((epoch + 1) % 10 == 0 || epoch + 1 == cfg.epochs) {
          spdlog::info("epoch {:4d}  total {:.6f}  l_w {:.6f}  l_gw {:.6f}  kl {:.6f}", epoch + 1, r.total, r.l_w,
                       r.l_gw, r.kl);
        }
      };
      Model model = Model::init(g.n_features(), cfg);
      const RunReport report = train(g, cfg, model, opts);
      const std::filesystem::path dir(out_dir);
      write_json(dir / "report.json", report_json(report));
      write_json(dir / "timing.json", timing_json(report));
      save_checkpoint(dir / "model.ckpt", model, cfg);
      write_embeddings(g, report.embeddings, dir / "embeddings");
      out << fmt::format("test accuracy: {:.2f} +- {:.2f} (probe-repeat std, n={})\n", report.accuracy.test_mean,
                         report.accuracy.test_std, report.accuracy.repeats.size());
    } else if (*eval_cmd) {
      auto [model, cfg] = load_checkpoint(checkpoint);
      const Graph g = load_graph(eval_data);
      const int n = repeats > 0 ? repeats : cfg.probe_repeats;
      const std::uint64_t seed = eval_seed_opt->count() > 0 ? eval_seed : cfg.seed;
      const EvalResult r = evaluate_embeddings(embed(model, g), g, n, seed);
      out << fmt::format("test accuracy: {:.2f} +- {:.2f} (probe-repeat std, n={})\n", r.test_mean, r.test_std, n);
      out << fmt::format("val accuracy: {:.2f} +- {:.2f}\n", r.val_mean, r.val_std);
    } else if (*embed_cmd) {
      auto [model, cfg] = load_checkpoint(embed_ckpt);
      const Graph g = load_graph(embed_data);
      write_embeddings(g, embed(model, g), embed_out);
    } else if (*tune_cmd) {
      const TrainConfig base = resolve_config(tune_config, tune_flags);
      const Graph g = load_graph(tune_data);
      ensure_dir(tune_out);
      TrainOptions opts;
      opts.threads = threads;
      int trial = 0;
      TrialScorer scorer = [&](const TrainConfig& cfg) {
        const double score = train(g, cfg, opts).accuracy.val_mean;
        spdlog::info("trial {:3d}  lr {:.3g}  alpha {:.3f}  beta {:.3g}  val {:.2f}", trial++, cfg.lr, cfg.alpha,
                     cfg.beta, score);
        return score;
      };
      const SearchResult r = random_search(g, base, ranges, trials, search_seed, scorer, opts);
      const std::filesystem::path dir(tune_out);
      write_json(dir / "trials.json", search_json(r));
      write_json(dir / "best_config.json", to_json(r.best));
      out << fmt::format("best trial {} with validation accuracy {:.2f}\n", r.best_index,
                         r.trials[static_cast<std::size_t>(r.best_index)].score);
    } else if (*sbm_cmd) {
      save_graph(gen_sbm(sbm), sbm_out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace sgec::cli
