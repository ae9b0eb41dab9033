#include "backtrack/errors.hpp"
#include "backtrack/harness.hpp"
#include "backtrack/metrics.hpp"
#include "backtrack/morpho.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

namespace py = pybind11;
using namespace backtrack;

namespace {

py::dict to_dict(const Scm& scm, const StructuredVector& v) {
  py::dict out;
  for (const auto& node : scm.graph().nodes()) {
    const Eigen::VectorXd block = v.block(node.id);
    out[py::str(node.name)] = block;
  }
  return out;
}

StructuredVector from_dict(const Scm& scm, const py::dict& d) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : d) {
    const auto arr = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(value);
    if (!arr) throw FormatError("factual values must be numeric");
    const std::vector<double> values(arr.data(), arr.data() + arr.size());
    j[py::cast<std::string>(key)] = values;
  }
  return factual_from_json(scm, j);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

py::dict row_to_dict(const Scm& scm, const ResultRow& r) {
  py::dict out;
  out["method"] = r.method;
  out["sample"] = r.sample;
  out["x"] = to_dict(scm, r.x);
  out["x_star"] = to_dict(scm, r.x_star);
  out["u"] = to_dict(scm, r.u);
  out["u_star"] = to_dict(scm, r.u_star);
  out["residual"] = r.residual;
  out["iterations"] = r.iterations;
  out["energy_final"] = r.energy_final;
  return out;
}

}  // namespace

PYBIND11_MODULE(_backtrack, m) {
  m.doc() = "Backtracking counterfactuals on invertible structural causal models";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def(
      "generate_dataset",
      [](Eigen::Index n, std::uint64_t seed, const std::filesystem::path& out) {
        const auto data = generate_morpho_dataset(n, seed, out);
        return py::make_tuple(data.columns, data.values);
      },
      py::arg("n"), py::arg("seed"), py::arg("out"),
      "Samples the thickness/intensity/image dataset, writes it as CSV and returns (columns, values).");

  m.def(
      "read_csv",
      [](const std::filesystem::path& path) {
        const auto data = read_csv(path);
        return py::make_tuple(data.columns, data.values);
      },
      py::arg("path"));

  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& graph, const std::filesystem::path& out,
         std::optional<std::pair<std::string, std::string>> reverse_edge, std::uint64_t seed) {
        TrainOptions options;
        options.reverse_edge = std::move(reverse_edge);
        options.mle.seed = seed;
        const auto outcome = train_scm(read_csv(data), read_json(graph), options);
        save_model(outcome.model, out);
        py::list report;
        for (const auto& r : outcome.report) {
          py::dict d;
          d["node"] = r.node;
          d["train_nll"] = r.train_nll;
          d["validation_nll"] = r.validation_nll;
          d["iterations"] = r.iterations;
          report.append(d);
        }
        return report;
      },
      py::arg("data"), py::arg("graph"), py::arg("out"), py::arg("reverse_edge") = py::none(),
      py::arg("seed") = 0, "Fits every mechanism by maximum likelihood and saves the model JSON.");

  py::class_<TrainedModel>(m, "Model")
      .def_static("load", &load_model, py::arg("path"))
      .def_property_readonly("nodes",
                             [](const TrainedModel& model) {
                               std::vector<std::string> names;
                               for (const auto& node : model.scm.graph().nodes()) names.push_back(node.name);
                               return names;
                             })
      .def(
          "factual_from_row",
          [](const TrainedModel& model, const std::filesystem::path& data, Eigen::Index row) {
            return to_dict(model.scm, factual_from_row(model.scm, read_csv(data), row));
          },
          py::arg("data"), py::arg("row"))
      .def(
          "sample_prior",
          [](const TrainedModel& model, std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            return to_dict(model.scm, model.scaling.to_data(sample_prior(model.scm, rng)));
          },
          py::arg("seed") = 0, "Factual drawn from the model, in data units.")
      .def(
          "query",
          [](const TrainedModel& model, const std::string& method, const py::dict& factual,
             const std::string& antecedent, double lambda, int iterations, double step_size, int samples,
             int sparsity_m, std::uint64_t seed, const std::string& weights) {
            QueryOptions o;
            o.config = method == "stochastic" ? BacktrackingConfig::stochastic_defaults()
                                              : BacktrackingConfig::mode_defaults();
            if (lambda > 0.0) o.config.lambda = lambda;
            if (iterations >= 0) o.config.iterations = iterations;
            if (step_size > 0.0) o.config.step_size = step_size;
            o.config.seed = seed;
            if (!weights.empty()) o.config.weights = parse_weights(model.scm, weights);
            o.samples = samples;
            o.sparsity_m = sparsity_m;
            const auto rows = run_query(model, method, from_dict(model.scm, factual),
                                        parse_antecedent(model.scm, antecedent), o);
            py::list out;
            for (const auto& r : rows) out.append(row_to_dict(model.scm, r));
            return out;
          },
          py::arg("method"), py::arg("factual"), py::arg("antecedent"), py::arg("lam") = -1.0,
          py::arg("iterations") = -1, py::arg("step_size") = -1.0, py::arg("samples") = 1,
          py::arg("sparsity_m") = 1, py::arg("seed") = 0, py::arg("weights") = "",
          "Runs one counterfactual query. Factual and antecedent are in data units; "
          "the antecedent is written NODE=VALUE[,NODE=VALUE].")
      .def(
          "metrics",
          [](const TrainedModel& model, const py::dict& factual, const py::dict& counterfactual,
             const std::vector<std::string>& attributes, const std::string& inner) {
            std::vector<NodeId> ids;
            for (const auto& name : attributes) {
              const auto id = model.scm.graph().find(name);
              if (!id) throw InvalidPlan("unknown node '" + name + "'");
              ids.push_back(*id);
            }
            const auto x = model.scaling.to_model(from_dict(model.scm, factual));
            const auto x_star = model.scaling.to_model(from_dict(model.scm, counterfactual));
            const auto r = evaluate_metrics(model.scm, x, x_star, parse_inner_distance(inner), ids);
            py::dict out;
            out["plausible"] = r.plausible;
            out["obs"] = r.obs;
            out["causal"] = r.causal;
            return out;
          },
          py::arg("factual"), py::arg("counterfactual"), py::arg("attributes"), py::arg("inner") = "SQU",
          "Plausibility, observational and causal distances, computed in model units.");
}
