#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "sgec/pipeline.hpp"

namespace sgec {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(StructureMode mode) {
  return mode == StructureMode::kHops ? "hops" : "feature-weighted";
}

StructureMode parse_structure_mode(std::string_view name) {
  if (name == "hops") return StructureMode::kHops;
  if (name == "feature-weighted") return StructureMode::kFeatureWeighted;
  throw std::invalid_argument(fmt::format("unknown gw_metric '{}' (expected hops, feature-weighted)", name));
}

std::string to_string(SigmaConvention c) { return c == SigmaConvention::kHalf ? "half" : "literal"; }

SigmaConvention parse_sigma_convention(std::string_view name) {
  if (name == "half") return SigmaConvention::kHalf;
  if (name == "literal") return SigmaConvention::kLiteral;
  throw std::invalid_argument(fmt::format("unknown sigma_convention '{}' (expected half, literal)", name));
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(fmt::format("alpha must lie in [0, 1], got {}", alpha));
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail(fmt::format("beta must be finite and >= 0, got {}", beta));
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(fmt::format("tau must be > 0, got {}", tau));
  if (k < 1) fail(fmt::format("k must be >= 1, got {}", k));
  if (s_size < 2) fail(fmt::format("s_size must be >= 2, got {}", s_size));
  if (!(eps_sinkhorn > 0.0)) fail(fmt::format("eps_sinkhorn must be > 0, got {}", eps_sinkhorn));
  if (!(lr > 0.0) || !std::isfinite(lr)) fail(fmt::format("lr must be > 0, got {}", lr));
  if (epochs < 0) fail(fmt::format("epochs must be >= 0, got {}", epochs));
  if (hidden_dim < 1) fail(fmt::format("hidden_dim must be >= 1, got {}", hidden_dim));
  if (latent_dim < 1) fail(fmt::format("latent_dim must be >= 1, got {}", latent_dim));
  if (gw_restarts < 1) fail(fmt::format("gw_restarts must be >= 1, got {}", gw_restarts));
  if (probe_repeats < 1) fail(fmt::format("probe_repeats must be >= 1, got {}", probe_repeats));
}

ordered_json to_json(const TrainConfig& cfg) {
  ordered_json j;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["tau"] = cfg.tau;
  j["k"] = cfg.k;
  j["s_size"] = cfg.s_size;
  j["eps_sinkhorn"] = cfg.eps_sinkhorn;
  j["lr"] = cfg.lr;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["hidden_dim"] = cfg.hidden_dim;
  j["latent_dim"] = cfg.latent_dim;
  j["gw_metric"] = to_string(cfg.gw_metric);
  j["ablation"] = to_string(cfg.ablation);
  j["sigma_convention"] = to_string(cfg.sigma);
  j["denominator_includes_positive"] = cfg.denominator_includes_positive;
  j["gw_restarts"] = cfg.gw_restarts;
  j["probe_repeats"] = cfg.probe_repeats;
  return j;
}

namespace {

template <typename T>
T number_field(const json& v, const std::string& key) {
  if (!v.is_number()) throw std::invalid_argument(fmt::format("config: '{}' must be a number", key));
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw std::invalid_argument(fmt::format("config: '{}' must be an integer", key));
    if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()) {
      throw std::invalid_argument(fmt::format("config: '{}' must be non-negative", key));
    }
  }
  return v.get<T>();
}

std::string string_field(const json& v, const std::string& key) {
  if (!v.is_string()) throw std::invalid_argument(fmt::format("config: '{}' must be a string", key));
  return v.get<std::string>();
}

}  // namespace

TrainConfig config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  TrainConfig cfg = base;
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") cfg.alpha = number_field<double>(v, key);
    else if (key == "beta") cfg.beta = number_field<double>(v, key);
    else if (key == "tau") cfg.tau = number_field<double>(v, key);
    else if (key == "k") cfg.k = number_field<Index>(v, key);
    else if (key == "s_size") cfg.s_size = number_field<Index>(v, key);
    else if (key == "eps_sinkhorn") cfg.eps_sinkhorn = number_field<double>(v, key);
    else if (key == "lr") cfg.lr = number_field<double>(v, key);
    else if (key == "epochs") cfg.epochs = number_field<int>(v, key);
    else if (key == "seed") cfg.seed = number_field<std::uint64_t>(v, key);
    else if (key == "hidden_dim") cfg.hidden_dim = number_field<Index>(v, key);
    else if (key == "latent_dim") cfg.latent_dim = number_field<Index>(v, key);
    else if (key == "gw_metric") cfg.gw_metric = parse_structure_mode(string_field(v, key));
    else if (key == "ablation") cfg.ablation = parse_ablation(string_field(v, key));
    else if (key == "sigma_convention") cfg.sigma = parse_sigma_convention(string_field(v, key));
    else if (key == "denominator_includes_positive") {
      if (!v.is_boolean()) throw std::invalid_argument("config: 'denominator_includes_positive' must be a boolean");
      cfg.denominator_includes_positive = v.get<bool>();
    } else if (key == "gw_restarts") cfg.gw_restarts = number_field<int>(v, key);
    else if (key == "probe_repeats") cfg.probe_repeats = number_field<int>(v, key);
    else throw std::invalid_argument(fmt::format("config: unknown key '{}'", key));
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open config file: {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(fmt::format("config: {} is not valid JSON: {}", path.string(), e.what()));
  }
  return config_from_json(j, base);
}

// ---------------------------------------------------------------------------
// Checkpoints: a text manifest, then the tensors as little-endian doubles in
// manifest order, row-major.

namespace {

constexpr const char* kCheckpointMagic = "SGEC-CHECKPOINT v1";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write checkpoint: {}", path.string()));
  const auto params = model.all_parameters();
  out << kCheckpointMagic << '\n';
  out << "config " << to_json(cfg).dump() << '\n';
  out << "tensors " << params.size() << '\n';
  for (const auto& p : params) out << p.name << ' ' << p.value->rows() << ' ' << p.value->cols() << '\n';
  out << "data\n";
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.value->data()),
              static_cast<std::streamsize>(p.value->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error(fmt::format("failed writing checkpoint: {}", path.string()));
}

std::pair<Model, TrainConfig> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("missing checkpoint file: {}", path.string()));
  auto bad = [&](const std::string& what) {
    return std::runtime_error(fmt::format("corrupt checkpoint {}: {}", path.string(), what));
  };
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw bad("bad header");
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) throw bad("missing config line");
  TrainConfig cfg;
  try {
    cfg = config_from_json(json::parse(line.substr(7)));
  } catch (const json::exception& e) {
    throw bad(std::string("unreadable config: ") + e.what());
  }
  cfg.validate();
  std::size_t count = 0;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "tensors %zu", &count) != 1) throw bad("missing tensor count");

  struct Entry {
    std::string name;
    Index rows;
    Index cols;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw bad("truncated manifest");
    std::istringstream ls(line);
    Entry e;
    if (!(ls >> e.name >> e.rows >> e.cols)) throw bad("malformed manifest line '" + line + "'");
    entries.push_back(e);
  }
  if (!std::getline(in, line) || line != "data") throw bad("missing data marker");
  if (entries.empty()) throw bad("no tensors");

  Model model = Model::init(entries.front().rows, cfg);
  auto params = model.all_parameters();
  if (params.size() != entries.size()) throw bad("tensor count does not match the model layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Entry& e = entries[i];
    if (e.name != params[i].name || e.rows != params[i].value->rows() || e.cols != params[i].value->cols()) {
      throw bad(fmt::format("tensor {} is {} {}x{}, expected {} {}x{}", i, e.name, e.rows, e.cols, params[i].name,
                            params[i].value->rows(), params[i].value->cols()));
    }
    in.read(reinterpret_cast<char*>(params[i].value->data()),
            static_cast<std::streamsize>(params[i].value->size() * sizeof(double)));
    if (!in) throw bad("truncated data for " + e.name);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw bad("trailing bytes after data");
  return {std::move(model), cfg};
}

}  // namespace sgec
