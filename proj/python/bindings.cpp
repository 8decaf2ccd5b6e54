#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sgec/objective.hpp"
#include "sgec/ot.hpp"
#include "sgec/pipeline.hpp"

namespace py = pybind11;
using namespace sgec;

namespace {

// Configs and reports cross the boundary as JSON text; the Python wrapper
// converts them to dicts.
TrainConfig parse_config(const std::string& text) {
  return text.empty() ? TrainConfig{} : config_from_json(nlohmann::json::parse(text));
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["test_mean"] = r.test_mean;
  d["test_std"] = r.test_std;
  d["val_mean"] = r.val_mean;
  d["val_std"] = r.val_std;
  py::list reps;
  for (const auto& p : r.repeats) reps.append(py::make_tuple(p.val_accuracy, p.test_accuracy));
  d["repeats"] = reps;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Subgraph Gaussian embedding contrast: graph SSL engine";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Graph>(m, "Graph")
      .def_property_readonly("n_nodes", &Graph::n_nodes)
      .def_property_readonly("n_features", &Graph::n_features)
      .def_property_readonly("n_classes", &Graph::n_classes)
      .def_property_readonly("n_edges", &Graph::n_edges)
      .def_property_readonly("features", &Graph::features)
      .def_property_readonly("labels", &Graph::labels)
      .def_property_readonly("edges", &Graph::edges)
      .def_property_readonly("train_ids", [](const Graph& g) { return g.splits().train; })
      .def_property_readonly("val_ids", [](const Graph& g) { return g.splits().val; })
      .def_property_readonly("test_ids", [](const Graph& g) { return g.splits().test; });

  m.def("load_graph", &load_graph, py::arg("dir"));
  m.def("save_graph", &save_graph, py::arg("graph"), py::arg("dir"));
  m.def(
      "gen_sbm",
      [](Index n_per_block, Index blocks, double p_in, double p_out, double noise_std, std::uint64_t seed) {
        return gen_sbm(SbmParams{n_per_block, blocks, p_in, p_out, seed, noise_std});
      },
      py::arg("n_per_block") = 100, py::arg("blocks") = 2, py::arg("p_in") = 0.1, py::arg("p_out") = 0.01,
      py::arg("noise_std") = 0.1, py::arg("seed") = 0);

  m.def("default_config_json", [] { return to_json(TrainConfig{}).dump(); });
  m.def(
      "normalize_config_json", [](const std::string& text) {
        const TrainConfig cfg = parse_config(text);
        cfg.validate();
        return to_json(cfg).dump();
      },
      py::arg("config_json"));

  m.def(
      "train",
      [](const Graph& g, const std::string& config_json, int threads, const std::filesystem::path& checkpoint) {
        const TrainConfig cfg = parse_config(config_json);
        TrainOptions opts;
        opts.threads = threads;
        RunReport r;
        {
          py::gil_scoped_release release;
          Model model = Model::init(g.n_features(), cfg);
          r = train(g, cfg, model, opts);
          if (!checkpoint.empty()) save_checkpoint(checkpoint, model, cfg);
        }
        return py::make_tuple(report_json(r).dump(), r.embeddings);
      },
      py::arg("graph"), py::arg("config_json") = "", py::arg("threads") = 1, py::arg("checkpoint") = std::filesystem::path());

  m.def(
      "embed",
      [](const std::filesystem::path& checkpoint, const Graph& g) {
        auto [model, cfg] = load_checkpoint(checkpoint);
        return embed(model, g);
      },
      py::arg("checkpoint"), py::arg("graph"));

  m.def(
      "evaluate_embeddings",
      [](const Matrix& emb, const Graph& g, int n_repeats, std::uint64_t seed) {
        return eval_dict(evaluate_embeddings(emb, g, n_repeats, seed));
      },
      py::arg("embeddings"), py::arg("graph"), py::arg("n_repeats") = 5, py::arg("seed") = 0);

  m.def(
      "sinkhorn",
      [](const Matrix& cost, const Vector& u, const Vector& v, double eps, int max_iter, double tol) {
        ot::SinkhornOptions opts;
        opts.eps = eps;
        opts.max_iter = max_iter;
        opts.tol = tol;
        const ot::TransportPlan p = ot::sinkhorn(cost, u, v, opts);
        py::dict d;
        d["coupling"] = p.coupling;
        d["transport_cost"] = p.transport_cost;
        d["marginal_error"] = p.marginal_error;
        d["iterations"] = p.iterations;
        d["converged"] = p.converged;
        return d;
      },
      py::arg("cost"), py::arg("u"), py::arg("v"), py::arg("eps") = 0.05, py::arg("max_iter") = 500,
      py::arg("tol") = 1e-6);

  m.def(
      "wasserstein",
      [](const Matrix& xa, const Matrix& xb, double tau, double eps) {
        ot::SinkhornOptions opts;
        opts.eps = eps;
        return ot::wasserstein(ad::Tensor(xa), ad::Tensor(xb), tau, opts).value()(0, 0);
      },
      py::arg("xa"), py::arg("xb"), py::arg("tau") = 0.5, py::arg("eps") = 0.05);

  m.def(
      "gromov_wasserstein",
      [](const Matrix& da, const Matrix& db, double eps, int restarts) {
        ot::GwOptions opts;
        opts.sinkhorn.eps = eps;
        opts.restarts = restarts;
        const ot::GwResult r = ot::solve_gromov_wasserstein(da, db, opts);
        return py::make_tuple(r.value, r.plan);
      },
      py::arg("da"), py::arg("db"), py::arg("eps") = 0.05, py::arg("restarts") = 4);

  m.def("exact_ot_oracle", py::overload_cast<const Matrix&>(&ot::exact_ot_oracle), py::arg("cost"));
  m.def("exact_gw_oracle", py::overload_cast<const Matrix&, const Matrix&>(&ot::exact_ot_oracle), py::arg("da"),
        py::arg("db"));

  m.def(
      "kl_term",
      [](const Matrix& mu, const Matrix& logvar, const std::string& convention) {
        const std::vector<ad::Tensor> m_list{ad::Tensor(mu)};
        const std::vector<ad::Tensor> lv_list{ad::Tensor(logvar)};
        return kl_term(m_list, lv_list, parse_sigma_convention(convention)).value()(0, 0);
      },
      py::arg("mu"), py::arg("logvar"), py::arg("convention") = "half");

  m.def(
      "info_nce",
      [](const Matrix& cross, const Matrix& original, double tau, bool include_positive) {
        return info_nce(PairDistances{ad::Tensor(cross), ad::Tensor(original)}, tau, include_positive)
            .value()(0, 0);
      },
      py::arg("cross"), py::arg("original"), py::arg("tau") = 0.5, py::arg("include_positive") = false);
}
