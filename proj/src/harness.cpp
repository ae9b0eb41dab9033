#include "backtrack/harness.hpp"

#include "backtrack/baselines.hpp"
#include "backtrack/errors.hpp"
#include "json_util.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace backtrack {

// ---------------------------------------------------------------------------
// Scaling

Scaling Scaling::identity(const CausalGraph& graph) {
  Scaling s;
  for (const auto& n : graph.nodes()) {
    s.set(n.id, {Eigen::VectorXd::Zero(n.dim), Eigen::VectorXd::Ones(n.dim)});
  }
  return s;
}

const NodeScaling& Scaling::get(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw DimensionMismatch("no scaling for node " + std::to_string(id.value));
  return it->second;
}

Eigen::VectorXd Scaling::to_model(NodeId id, const Eigen::Ref<const Eigen::VectorXd>& data) const {
  const auto& s = get(id);
  if (data.size() != s.mean.size()) throw DimensionMismatch("value does not match the node dimension");
  return (data - s.mean).cwiseQuotient(s.scale);
}

Eigen::VectorXd Scaling::to_data(NodeId id, const Eigen::Ref<const Eigen::VectorXd>& model) const {
  const auto& s = get(id);
  if (model.size() != s.mean.size()) throw DimensionMismatch("value does not match the node dimension");
  return model.cwiseProduct(s.scale) + s.mean;
}

StructuredVector Scaling::to_model(const StructuredVector& data) const {
  StructuredVector out = data;
  for (const auto& b : data.layout().blocks()) out.block(b.node) = to_model(b.node, data.block(b.node));
  return out;
}

StructuredVector Scaling::to_data(const StructuredVector& model) const {
  StructuredVector out = model;
  for (const auto& b : model.layout().blocks()) out.block(b.node) = to_data(b.node, model.block(b.node));
  return out;
}

Antecedent Scaling::to_model(const Antecedent& data) const {
  Antecedent out{data.nodes, Eigen::VectorXd(data.values.size())};
  Eigen::Index offset = 0;
  for (const auto& id : data.nodes) {
    const auto n = get(id).mean.size();
    if (offset + n > data.values.size()) throw DimensionMismatch("antecedent values are too short");
    out.values.segment(offset, n) = to_model(id, data.values.segment(offset, n));
    offset += n;
  }
  if (offset != data.values.size()) throw DimensionMismatch("antecedent values are too long");
  return out;
}

double Scaling::log_scale_sum(NodeId id) const { return get(id).scale.array().log().sum(); }

nlohmann::json Scaling::to_json(const CausalGraph& graph) const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& n : graph.nodes()) {
    const auto& s = get(n.id);
    j[n.name] = {{"mean", detail::vector_to_json(s.mean)}, {"std", detail::vector_to_json(s.scale)}};
  }
  return j;
}

Scaling Scaling::from_json(const nlohmann::json& j, const CausalGraph& graph) {
  Scaling s = identity(graph);
  for (const auto& n : graph.nodes()) {
    if (!j.contains(n.name)) continue;
    const auto& e = j.at(n.name);
    NodeScaling ns{detail::vector_from_json(e.at("mean")), detail::vector_from_json(e.at("std"))};
    if (ns.mean.size() == 1 && n.dim > 1) ns.mean = Eigen::VectorXd::Constant(n.dim, ns.mean[0]);
    if (ns.scale.size() == 1 && n.dim > 1) ns.scale = Eigen::VectorXd::Constant(n.dim, ns.scale[0]);
    if (ns.mean.size() != n.dim || ns.scale.size() != n.dim || (ns.scale.array() <= 0.0).any()) {
      throw FormatError("bad scaling for node '" + n.name + "'");
    }
    s.set(n.id, std::move(ns));
  }
  return s;
}

nlohmann::json model_to_json(const TrainedModel& model) {
  nlohmann::json j = scm_to_json(model.scm);
  j["scaling"] = model.scaling.to_json(model.scm.graph());
  return j;
}

TrainedModel model_from_json(const nlohmann::json& j) {
  Scm scm = scm_from_json(j);
  Scaling scaling = j.contains("scaling") ? Scaling::from_json(j.at("scaling"), scm.graph())
                                          : Scaling::identity(scm.graph());
  return {std::move(scm), std::move(scaling)};
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  save_json(model_to_json(model), path);
}

TrainedModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ModelNotFound("model file '" + path.string() + "' not found");
  return model_from_json(load_json(path));
}

// ---------------------------------------------------------------------------
// Training

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(Eigen::Index n, double fraction,
                                                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidPlan("train fraction must lie in (0, 1]");
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  cut = std::clamp<std::size_t>(cut, 1, rows.size());
  std::vector<Eigen::Index> train(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<Eigen::Index> validation(rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end());
  return {std::move(train), std::move(validation)};
}

namespace {

const nlohmann::json* find_node_spec(const nlohmann::json& spec, NodeId id) {
  for (const auto& n : spec.at("nodes")) {
    if (n.at("id").get<int>() == id.value) return &n;
  }
  return nullptr;
}

nlohmann::json mechanism_template(const nlohmann::json* node_spec) {
  if (node_spec && node_spec->contains("mechanism")) return node_spec->at("mechanism");
  return {{"kind", "affine"}};
}

Eigen::VectorXd broadcast(const nlohmann::json& j, Eigen::Index n) {
  Eigen::VectorXd v = detail::vector_from_json(j);
  if (v.size() == 1 && n > 1) v = Eigen::VectorXd::Constant(n, v[0]);
  if (v.size() != n) throw FormatError("range has the wrong length");
  return v;
}

/// Rewrites a data-unit sigmoid range as model-unit lower/width.
void convert_sigmoid_range(nlohmann::json& mech, const NodeScaling& s, const Eigen::MatrixXd& train_values) {
  auto& params = mech["params"];
  if (params.is_null()) params = nlohmann::json::object();
  if (params.contains("lower")) return;
  const auto n = s.mean.size();
  Eigen::VectorXd lo, hi;
  if (params.contains("range")) {
    const auto& r = params.at("range");
    if (!r.is_array() || r.size() != 2) throw FormatError("sigmoid range must be [lo, hi]");
    lo = broadcast(r[0], n);
    hi = broadcast(r[1], n);
    params.erase("range");
  } else {
    const Eigen::VectorXd mn = train_values.colwise().minCoeff().transpose();
    const Eigen::VectorXd mx = train_values.colwise().maxCoeff().transpose();
    const Eigen::VectorXd pad = 0.05 * (mx - mn).cwiseMax(1e-12);
    lo = mn - pad;
    hi = mx + pad;
  }
  const Eigen::VectorXd lower = (lo - s.mean).cwiseQuotient(s.scale);
  const Eigen::VectorXd width = (hi - lo).cwiseQuotient(s.scale);
  params["lower"] = detail::vector_to_json(lower);
  params["width"] = detail::vector_to_json(width);
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& v, const NodeScaling& s) {
  Eigen::MatrixXd out = v;
  for (Eigen::Index c = 0; c < v.cols(); ++c) out.col(c) = (v.col(c).array() - s.mean[c]) / s.scale[c];
  return out;
}

Eigen::MatrixXd parents_matrix(const CausalGraph& graph, const NodeSpec& node,
                               const std::map<NodeId, Eigen::MatrixXd>& values, Eigen::Index rows) {
  Eigen::Index width = 0;
  for (const auto& p : node.parents) width += graph.node(p).dim;
  Eigen::MatrixXd out(rows, width);
  Eigen::Index c = 0;
  for (const auto& p : node.parents) {
    const auto& v = values.at(p);
    out.middleCols(c, v.cols()) = v;
    c += v.cols();
  }
  return out;
}

}  // namespace

TrainOutcome train_scm(const Dataset& data, const nlohmann::json& spec, const TrainOptions& options) {
  if (data.rows() == 0) throw EmptyDataset("training dataset is empty");
  CausalGraph graph = graph_from_json(spec);
  if (options.reverse_edge) {
    graph = graph.with_reversed_edge(graph.id_of(options.reverse_edge->first),
                                     graph.id_of(options.reverse_edge->second));
  }
  topological_order(graph);

  auto [train_rows, validation_rows] = split_rows(data.rows(), options.train_fraction, options.split_seed);
  const Dataset train = data.take(train_rows);
  const Dataset validation = data.take(validation_rows);

  Scaling scaling;
  std::map<NodeId, Eigen::MatrixXd> train_std;
  std::map<NodeId, Eigen::MatrixXd> validation_std;
  std::map<NodeId, nlohmann::json> templates;
  for (const auto& node : graph.nodes()) {
    const Eigen::MatrixXd v = train.node_values(node);
    nlohmann::json mech = mechanism_template(find_node_spec(spec, node.id));
    const auto kind = mech.value("kind", std::string("affine"));
    NodeScaling s{Eigen::VectorXd::Zero(node.dim), Eigen::VectorXd::Ones(node.dim)};
    if (kind != "categorical") {
      s.mean = v.colwise().mean().transpose();
      for (Eigen::Index c = 0; c < v.cols(); ++c) {
        const double sd = std::sqrt((v.col(c).array() - s.mean[c]).square().mean());
        s.scale[c] = sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
      }
    }
    if (kind == "sigmoid") convert_sigmoid_range(mech, s, v);
    train_std[node.id] = standardize(v, s);
    validation_std[node.id] =
        validation.rows() ? standardize(validation.node_values(node), s) : Eigen::MatrixXd(0, node.dim);
    templates[node.id] = std::move(mech);
    scaling.set(node.id, std::move(s));
  }

  std::vector<MechanismPtr> mechanisms;
  std::vector<NodeTrainingReport> report;
  for (const auto& node : graph.nodes()) {
    Eigen::Index parent_dim = 0;
    for (const auto& p : node.parents) parent_dim += graph.node(p).dim;
    auto mech = mechanism_from_json(templates.at(node.id), parent_dim, node.dim,
                                    static_cast<std::uint64_t>(node.id.value));
    NodeTrainingReport r{node.name, 0.0, 0.0, 0};
    if (mech->kind() == MechanismKind::kPredictor) {
      mechanisms.push_back(std::move(mech));
      report.push_back(r);
      continue;
    }
    const Eigen::MatrixXd pa = parents_matrix(graph, node, train_std, train.rows());
    auto fit = train_flow_mle(*mech, pa, train_std.at(node.id), options.mle);
    r.train_nll = fit.final_nll;
    r.iterations = fit.iterations;
    if (validation.rows() > 0) {
      r.validation_nll = mean_negative_log_density(
          *fit.mechanism, parents_matrix(graph, node, validation_std, validation.rows()),
          validation_std.at(node.id));
    }
    mechanisms.push_back(std::move(fit.mechanism));
    report.push_back(r);
  }

  TrainOutcome out{TrainedModel{Scm(std::move(graph), std::move(mechanisms)), std::move(scaling)},
                   std::move(report), std::move(train_rows), std::move(validation_rows)};
  return out;
}

// ---------------------------------------------------------------------------
// Query parsing

StructuredVector factual_from_row(const Scm& scm, const Dataset& data, Eigen::Index row) {
  if (row < 0 || row >= data.rows()) throw InvalidPlan("factual row " + std::to_string(row) + " is out of range");
  StructuredVector x = StructuredVector::zeros(scm.observed_layout());
  for (const auto& node : scm.graph().nodes()) {
    const auto cols = data.node_columns(node);
    for (std::size_t k = 0; k < cols.size(); ++k) x.block(node.id)[static_cast<Eigen::Index>(k)] = data.values(row, cols[k]);
  }
  return x;
}

StructuredVector factual_from_json(const Scm& scm, const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("factual must be a JSON object keyed by node name");
  StructuredVector x = StructuredVector::zeros(scm.observed_layout());
  for (const auto& node : scm.graph().nodes()) {
    if (!j.contains(node.name)) throw FormatError("factual has no value for node '" + node.name + "'");
    const Eigen::VectorXd v = detail::vector_from_json(j.at(node.name));
    if (v.size() != node.dim) throw DimensionMismatch("factual value for '" + node.name + "' has the wrong size");
    x.block(node.id) = v;
  }
  return x;
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_number(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw FormatError("bad number '" + text + "'");
  }
  if (used != text.size()) throw FormatError("bad number '" + text + "'");
  return v;
}

std::pair<NodeId, std::string> split_assignment(const Scm& scm, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos) throw FormatError("expected NODE=VALUE, got '" + item + "'");
  const auto name = item.substr(0, eq);
  const auto id = scm.graph().find(name);
  if (!id) throw DimensionMismatch("unknown node '" + name + "'");
  return {*id, item.substr(eq + 1)};
}

}  // namespace

Antecedent parse_antecedent(const Scm& scm, const std::string& text) {
  Antecedent a;
  std::vector<double> values;
  for (const auto& item : split(text, ',')) {
    auto [id, rhs] = split_assignment(scm, item);
    a.nodes.push_back(id);
    for (const auto& v : split(rhs, ':')) values.push_back(parse_number(v));
  }
  a.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  scm.validate_antecedent(a);
  return a;
}

std::map<NodeId, double> parse_weights(const Scm& scm, const std::string& text) {
  std::map<NodeId, double> out;
  for (const auto& item : split(text, ',')) {
    auto [id, rhs] = split_assignment(scm, item);
    const double w = parse_number(rhs);
    if (!(w >= 0.0)) throw InvalidPlan("weights must be non-negative");
    out[id] = w;
  }
  return out;
}

void apply_config_json(const Scm& scm, const nlohmann::json& j, QueryOptions& options) {
  if (!j.is_object()) throw FormatError("solver config must be a JSON object");
  auto& c = options.config;
  auto node_id = [&](const std::string& name) {
    const auto id = scm.graph().find(name);
    if (!id) throw InvalidPlan("unknown node '" + name + "' in solver config");
    return *id;
  };
  const DistanceRegistry registry;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "iterations") c.iterations = value.get<int>();
      else if (key == "step_size") c.step_size = value.get<double>();
      else if (key == "damping") c.damping = value.get<double>();
      else if (key == "retry_with_damping") c.retry_with_damping = value.get<bool>();
      else if (key == "energy_tolerance") c.energy_tolerance = value.get<double>();
      else if (key == "stop_on_convergence") c.stop_on_convergence = value.get<bool>();
      else if (key == "oscillation_window") c.oscillation_window = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "first_order_iterations") c.first_order_iterations = value.get<int>();
      else if (key == "gradient_tolerance") c.gradient_tolerance = value.get<double>();
      else if (key == "default_weight") c.default_weight = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "sparsity_m") options.sparsity_m = value.get<int>();
      else if (key == "samples") options.samples = value.get<int>();
      else if (key == "distance") c.default_distance = registry.get(value.get<std::string>());
      else if (key == "weights") {
        for (const auto& [name, w] : value.items()) {
          if (!(w.get<double>() >= 0.0)) throw InvalidPlan("weights must be non-negative");
          c.weights[node_id(name)] = w.get<double>();
        }
      } else if (key == "distances") {
        for (const auto& [name, kind] : value.items()) c.distances[node_id(name)] = registry.get(kind.get<std::string>());
      } else {
        throw FormatError("unknown solver config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("solver config: ") + e.what());
  }
}

StructuredVector sample_prior(const Scm& scm, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd u(scm.latent_dim());
  for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = normal(rng);
  return scm.reduced_form(scm.make_latent(std::move(u)));
}

// ---------------------------------------------------------------------------
// Queries

namespace {

struct ModelAnswer {
  StructuredVector latent;
  StructuredVector counterfactual;  // model units
  double residual = 0.0;
  int iterations = 0;
  double energy = 0.0;
};

StructuredVector try_abduct(const Scm& scm, const StructuredVector& x) {
  try {
    return scm.abduct(x);
  } catch (const InversionFailure&) {
    return scm.make_latent(Eigen::VectorXd::Constant(scm.latent_dim(), std::numeric_limits<double>::quiet_NaN()));
  }
}

ModelAnswer from_result(CounterfactualResult r) {
  return {std::move(r.latent), std::move(r.counterfactual), r.residual, r.iterations, r.final_energy()};
}

/// Everything in model units.
std::vector<ModelAnswer> solve(const Scm& scm, const std::string& method, const StructuredVector& x,
                               const Antecedent& a, const QueryOptions& o) {
  std::vector<ModelAnswer> out;
  if (method == "mode") {
    out.push_back(from_result(mode_deepbc(scm, x, a, o.config)));
  } else if (method == "first-order") {
    out.push_back(from_result(mode_deepbc_first_order(scm, x, a, o.config)));
  } else if (method == "sparse") {
    out.push_back(from_result(sparse_deepbc(scm, x, a, o.sparsity_m, o.config)));
  } else if (method == "stochastic") {
    for (auto& r : stochastic_deepbc(scm, x, a, o.config, o.samples)) out.push_back(from_result(std::move(r)));
  } else if (method == "interventional") {
    auto ir = interventional_cf(scm, x, a);
    ModelAnswer ans;
    ans.latent = try_abduct(scm, ir.counterfactual);
    ans.residual = (ir.counterfactual.extract(a.nodes) - a.values).squaredNorm();
    ans.energy = ans.latent.values().allFinite() ? energy(ans.latent, ir.latent, a, scm, o.config)
                                                 : std::numeric_limits<double>::quiet_NaN();
    ans.counterfactual = std::move(ir.counterfactual);
    out.push_back(std::move(ans));
  } else {
    throw InvalidPlan("unknown method '" + method + "'");
  }
  return out;
}

std::string format_antecedent(const Scm& scm, const Antecedent& a) {
  std::string out;
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < a.nodes.size(); ++k) {
    const auto& node = scm.graph().node(a.nodes[k]);
    out += (k ? ";" : "") + node.name + "=";
    for (Eigen::Index d = 0; d < node.dim; ++d) out += (d ? ":" : "") + format_double(a.values[offset + d]);
    offset += node.dim;
  }
  return out;
}

std::vector<std::string> block_columns(const std::string& prefix, const Scm& scm, const BlockLayout& layout) {
  std::vector<std::string> out;
  for (const auto& b : layout.blocks()) {
    const auto& name = scm.graph().node(b.node).name;
    for (Eigen::Index k = 0; k < b.size; ++k) {
      out.push_back(prefix + name + (b.size == 1 ? "" : "[" + std::to_string(k) + "]"));
    }
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open '" + path.string() + "' for writing");
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoFailure("failed writing '" + path.string() + "'");
}

}  // namespace

std::vector<ResultRow> run_query(const TrainedModel& model, const std::string& method,
                                 const StructuredVector& x_data, const Antecedent& a_data,
                                 const QueryOptions& options, int query_index) {
  const auto& scm = model.scm;
  const StructuredVector x = model.scaling.to_model(scm.make_observed(x_data.values()));
  const Antecedent a = model.scaling.to_model(a_data);
  scm.validate_antecedent(a);
  const StructuredVector u = scm.abduct(x);

  std::vector<ResultRow> rows;
  int sample = 0;
  for (auto& ans : solve(scm, method, x, a, options)) {
    ResultRow r;
    r.method = method;
    r.query = query_index;
    r.sample = sample++;
    r.antecedent = a_data;
    r.x = model.scaling.to_data(x);
    r.x_star = model.scaling.to_data(ans.counterfactual);
    r.u = u;
    r.u_star = std::move(ans.latent);
    r.residual = ans.residual;
    r.iterations = ans.iterations;
    r.energy_final = ans.energy;
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_results(const std::vector<ResultRow>& rows, const Scm& scm, const std::filesystem::path& path) {
  auto out = open_out(path);
  std::vector<std::string> header{"method", "query", "sample", "antecedent"};
  for (const auto* prefix : {"x.", "xstar."}) {
    for (auto& c : block_columns(prefix, scm, *scm.observed_layout())) header.push_back(std::move(c));
  }
  for (const auto* prefix : {"u.", "ustar."}) {
    for (auto& c : block_columns(prefix, scm, *scm.latent_layout())) header.push_back(std::move(c));
  }
  for (const auto* c : {"residual", "iterations", "energy_final"}) header.emplace_back(c);
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
  out << '\n';

  for (const auto& r : rows) {
    out << r.method << ',' << r.query << ',' << r.sample << ',' << format_antecedent(scm, r.antecedent);
    for (const auto* v : {&r.x, &r.x_star, &r.u, &r.u_star}) {
      for (Eigen::Index k = 0; k < v->size(); ++k) out << ',' << format_double(v->values()[k]);
    }
    out << ',' << format_double(r.residual) << ',' << r.iterations << ',' << format_double(r.energy_final) << '\n';
  }
  close_out(out, path);
}

// ---------------------------------------------------------------------------
// Experiments

std::vector<double> Grid::values() const {
  if (steps < 1) throw InvalidPlan("grid needs at least one point");
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw InvalidPlan("grid bounds must be finite");
  std::vector<double> out;
  for (int k = 0; k < steps; ++k) {
    out.push_back(steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps - 1));
  }
  return out;
}

Grid parse_grid(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() != 3) throw InvalidPlan("grid must be LO:HI:STEPS, got '" + text + "'");
  Grid g{parse_number(parts[0]), parse_number(parts[1]), 0};
  const double steps = parse_number(parts[2]);
  if (steps < 1 || steps != std::floor(steps)) throw InvalidPlan("grid steps must be a positive integer");
  g.steps = static_cast<int>(steps);
  return g;
}

namespace {

StructuredVector default_factual(const TrainedModel& model, const std::optional<StructuredVector>& given,
                                 std::uint64_t seed) {
  if (given) return model.scm.make_observed(given->values());
  auto rng = detail::stream_rng(seed, 0);
  return model.scaling.to_data(sample_prior(model.scm, rng));
}

}  // namespace

std::vector<ResultRow> run_sweep(const TrainedModel& model, const SweepPlan& plan) {
  const auto grid = plan.grid.values();
  if (plan.methods.empty()) throw InvalidPlan("sweep needs at least one method");
  const auto id = model.scm.graph().find(plan.node);
  if (!id) throw InvalidPlan("unknown sweep node '" + plan.node + "'");
  if (model.scm.graph().node(*id).dim != 1) throw InvalidPlan("sweep node must be scalar");
  const StructuredVector x = default_factual(model, plan.factual, plan.seed);

  std::vector<std::vector<ResultRow>> per_point(grid.size());
  detail::parallel_for(grid.size(), [&](std::size_t g) {
    const Antecedent a{{*id}, Eigen::VectorXd::Constant(1, grid[g])};
    for (const auto& method : plan.methods) {
      for (auto& r : run_query(model, method, x, a, plan.options, static_cast<int>(g))) {
        per_point[g].push_back(std::move(r));
      }
    }
  });
  std::vector<ResultRow> rows;
  for (auto& point : per_point) {
    for (auto& r : point) rows.push_back(std::move(r));
  }
  return rows;
}

WrongGraphResult run_wrong_graph(const TrainedModel& correct, const TrainedModel& reversed,
                                 const WrongGraphPlan& plan) {
  const auto grid = plan.grid.values();
  if (plan.distances.size() < 2) throw InvalidPlan("wrong-graph runs need at least two distance kinds");
  const DistanceRegistry registry;
  const StructuredVector x_data = default_factual(correct, plan.factual, plan.seed);

  WrongGraphResult result;
  for (const auto* model : {&correct, &reversed}) {
    const bool is_correct = model == &correct;
    const auto& scm = model->scm;
    const auto node = scm.graph().find(plan.node);
    const auto response = scm.graph().find(plan.response);
    if (!node || !response) throw InvalidPlan("wrong-graph nodes are missing from a model");
    const StructuredVector x = model->scaling.to_model(scm.make_observed(x_data.values()));

    std::vector<std::vector<double>> responses(grid.size());
    for (const auto& kind : plan.distances) {
      BacktrackingConfig config = plan.config;
      config.default_distance = registry.get(kind);
      std::vector<WrongGraphRow> rows(grid.size());
      detail::parallel_for(grid.size(), [&](std::size_t g) {
        const Antecedent a{{*node}, model->scaling.to_model(*node, Eigen::VectorXd::Constant(1, grid[g]))};
        const auto r = mode_deepbc(scm, x, a, config);
        const StructuredVector xs = model->scaling.to_data(r.counterfactual);
        rows[g] = {is_correct ? "correct" : "reversed", kind, static_cast<int>(g), grid[g],
                   xs.block(*node)[0], xs.block(*response)[0], r.residual};
      });
      for (std::size_t g = 0; g < grid.size(); ++g) {
        responses[g].push_back(rows[g].response_star);
        result.rows.push_back(rows[g]);
      }
    }
    double spread = 0.0;
    for (const auto& values : responses) {
      const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
      spread = std::max(spread, *mx - *mn);
    }
    (is_correct ? result.correct_spread : result.reversed_spread) = spread;
  }
  return result;
}

void write_wrong_graph(const WrongGraphResult& result, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "graph,distance,grid_index,target,node_star,response_star,residual\n";
  for (const auto& r : result.rows) {
    out << r.graph << ',' << r.distance << ',' << r.grid_index << ',' << format_double(r.target) << ','
        << format_double(r.node_star) << ',' << format_double(r.response_star) << ','
        << format_double(r.residual) << '\n';
  }
  close_out(out, path);
}

BenchmarkResult run_benchmark(const TrainedModel& model, const BenchmarkPlan& plan) {
  if (plan.repetitions < 1) throw InvalidPlan("repetitions must be at least 1");
  if (plan.methods.empty()) throw InvalidPlan("benchmark needs at least one method");
  for (const auto& m : plan.methods) {
    if (m != "mode" && m != "sparse" && m != "interventional" && m != "first-order") {
      throw InvalidPlan("benchmark method must be mode, sparse or interventional, got '" + m + "'");
    }
  }
  const auto& scm = model.scm;
  std::vector<NodeId> attributes;
  for (const auto& name : plan.attributes) {
    const auto id = scm.graph().find(name);
    if (!id) throw InvalidPlan("unknown attribute node '" + name + "'");
    attributes.push_back(*id);
  }
  if (attributes.empty()) throw InvalidPlan("benchmark needs at least one attribute node");

  std::vector<std::string> methods = plan.methods;
  if (plan.control) methods.emplace_back("control");
  const InnerDistance kinds[] = {InnerDistance::kSqu, InnerDistance::kAbs};

  struct Outcome {
    bool ok = false;
    std::string error;
    MetricReport squ;
    MetricReport abs;
  };
  const auto reps = static_cast<std::size_t>(plan.repetitions);
  std::vector<std::vector<Outcome>> outcomes(reps, std::vector<Outcome>(methods.size()));

  detail::parallel_for(reps, [&](std::size_t r) {
    auto rng = detail::stream_rng(plan.seed, r);
    const StructuredVector x = sample_prior(scm, rng);
    std::uniform_int_distribution<std::size_t> pick(0, attributes.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const NodeId target = attributes[pick(rng)];
    Eigen::VectorXd value(scm.graph().node(target).dim);
    for (Eigen::Index k = 0; k < value.size(); ++k) value[k] = normal(rng);

    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto& o = outcomes[r][m];
      try {
        const bool control = methods[m] == "control";
        const Antecedent a{{target}, control ? Eigen::VectorXd(x.block(target)) : value};
        const auto answers = solve(scm, control ? "mode" : methods[m], x, a, plan.options);
        const auto& xs = answers.front().counterfactual;
        o.squ = evaluate_metrics(scm, x, xs, kinds[0], attributes);
        o.abs = evaluate_metrics(scm, x, xs, kinds[1], attributes);
        o.ok = std::isfinite(o.squ.plausible) && std::isfinite(o.squ.causal) && std::isfinite(o.abs.causal);
        if (!o.ok) o.error = "non-finite metric";
      } catch (const Error& e) {
        o.error = e.what();
      }
    }
  });

  BenchmarkResult result;
  auto summarize = [&](const std::string& method, const std::string& metric, const std::string& m,
                       const std::vector<double>& v) {
    BenchmarkRow row{method, metric, m, 0.0, 0.0, static_cast<int>(v.size())};
    if (!v.empty()) {
      row.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - row.mean) * (x - row.mean);
      row.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    }
    result.rows.push_back(row);
  };
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<double> pl, obs_s, obs_a, cau_s, cau_a;
    auto& causal_trace = result.causal_squ[methods[m]];
    int failures = 0;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& o = outcomes[r][m];
      if (!o.ok) {
        if (failures++ == 0) result.first_failure[methods[m]] = o.error;
        causal_trace.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      pl.push_back(o.squ.plausible);
      obs_s.push_back(o.squ.obs);
      obs_a.push_back(o.abs.obs);
      cau_s.push_back(o.squ.causal);
      cau_a.push_back(o.abs.causal);
      causal_trace.push_back(o.squ.causal);
    }
    result.failures[methods[m]] = failures;
    summarize(methods[m], "plausible", "-", pl);
    summarize(methods[m], "obs", "SQU", obs_s);
    summarize(methods[m], "obs", "ABS", obs_a);
    summarize(methods[m], "causal", "SQU", cau_s);
    summarize(methods[m], "causal", "ABS", cau_a);
  }
  return result;
}

void write_benchmark(const BenchmarkResult& result, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,metric,m,mean,std,n_repetitions\n";
  for (const auto& r : result.rows) {
    out << r.method << ',' << r.metric << ',' << r.m << ',' << format_double(r.mean) << ','
        << format_double(r.std) << ',' << r.n_repetitions << '\n';
  }
  close_out(out, path);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw EmptyDataset("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

StochasticResult run_stochastic_demo(const TrainedModel& model, const StochasticPlan& plan) {
  const auto grid = plan.grid.values();
  if (plan.samples < 1) throw InvalidPlan("samples must be at least 1");
  const auto& scm = model.scm;
  const auto id = scm.graph().find(plan.node);
  if (!id) throw InvalidPlan("unknown node '" + plan.node + "'");
  const StructuredVector x_data = default_factual(model, plan.factual, plan.seed);
  const StructuredVector x = model.scaling.to_model(scm.make_observed(x_data.values()));
  const StructuredVector u = scm.abduct(x);

  StochasticResult result;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const Antecedent a_data{{*id}, Eigen::VectorXd::Constant(1, grid[g])};
    const Antecedent a = model.scaling.to_model(a_data);
    BacktrackingConfig config = plan.config;
    config.seed = detail::stream_rng(plan.seed, g + 1)();
    const auto mode = mode_deepbc(scm, x, a, config);
    const StructuredVector mode_data = model.scaling.to_data(mode.counterfactual);
    const auto samples = stochastic_deepbc(scm, x, a, config, plan.samples);

    std::map<NodeId, std::vector<double>> values;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      ResultRow r;
      r.method = "stochastic";
      r.query = static_cast<int>(g);
      r.sample = static_cast<int>(k);
      r.antecedent = a_data;
      r.x = x_data;
      r.x_star = model.scaling.to_data(samples[k].counterfactual);
      r.u = u;
      r.u_star = samples[k].latent;
      r.residual = samples[k].residual;
      r.iterations = samples[k].iterations;
      r.energy_final = samples[k].final_energy();
      for (const auto& node : scm.graph().nodes()) {
        if (node.dim == 1) values[node.id].push_back(r.x_star.block(node.id)[0]);
      }
      result.samples.push_back(std::move(r));
    }
    for (const auto& node : scm.graph().nodes()) {
      if (node.dim != 1) continue;
      const auto& v = values[node.id];
      StochasticSummary s;
      s.grid_index = static_cast<int>(g);
      s.target = grid[g];
      s.node = node.name;
      s.q1 = quantile(v, 0.25);
      s.median = quantile(v, 0.5);
      s.q3 = quantile(v, 0.75);
      std::vector<double> dev;
      for (double y : v) dev.push_back(std::abs(y - s.median));
      s.mad = quantile(dev, 0.5);
      s.mode = mode_data.block(node.id)[0];
      result.summaries.push_back(s);
    }
  }
  return result;
}

void write_stochastic_summary(const std::vector<StochasticSummary>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "grid_index,target,node,q1,median,q3,mad,mode\n";
  for (const auto& s : rows) {
    out << s.grid_index << ',' << format_double(s.target) << ',' << s.node << ',' << format_double(s.q1) << ','
        << format_double(s.median) << ',' << format_double(s.q3) << ',' << format_double(s.mad) << ','
        << format_double(s.mode) << '\n';
  }
  close_out(out, path);
}

}  // namespace backtrack
