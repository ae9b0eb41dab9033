#include "backtrack/scm.hpp"

#include "backtrack/errors.hpp"

#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace backtrack {
namespace {

Eigen::Index parent_dim_of(const CausalGraph& graph, const NodeSpec& node) {
  Eigen::Index total = 0;
  for (const auto& p : node.parents) total += graph.node(p).dim;
  return total;
}

std::string signature_problem(const CausalGraph& graph, const NodeSpec& node, const Mechanism& mech) {
  std::ostringstream msg;
  const auto expected_parents = parent_dim_of(graph, node);
  if (mech.parent_dim() != expected_parents) {
    msg << "node '" << node.name << "': mechanism expects parent dimension " << mech.parent_dim()
        << ", graph provides " << expected_parents;
  } else if (mech.output_dim() != node.dim) {
    msg << "node '" << node.name << "': mechanism output dimension " << mech.output_dim()
        << " differs from node dimension " << node.dim;
  }
  return msg.str();
}

}  // namespace

Scm::Scm(CausalGraph graph, std::vector<MechanismPtr> mechanisms)
    : graph_(std::move(graph)), mechanisms_(std::move(mechanisms)) {
  if (mechanisms_.size() != graph_.size()) {
    throw DimensionMismatch("SCM needs exactly one mechanism per node");
  }
  order_ = topological_order(graph_);

  std::vector<NodeId> ids;
  std::vector<Eigen::Index> observed_sizes;
  std::vector<Eigen::Index> latent_sizes;
  for (std::size_t i = 0; i < graph_.size(); ++i) {
    const auto& node = graph_.nodes()[i];
    if (!mechanisms_[i]) throw Error("node '" + node.name + "' has no mechanism");
    if (auto problem = signature_problem(graph_, node, *mechanisms_[i]); !problem.empty()) {
      throw DimensionMismatch(problem);
    }
    ids.push_back(node.id);
    observed_sizes.push_back(node.dim);
    latent_sizes.push_back(mechanisms_[i]->latent_dim());
  }
  observed_ = std::make_shared<const BlockLayout>(ids, observed_sizes);
  latent_ = std::make_shared<const BlockLayout>(ids, latent_sizes);
}

void Scm::check_observed(const StructuredVector& x) const {
  if (!x.layout_ptr() || !(x.layout() == *observed_)) {
    throw DimensionMismatch("vector does not match the SCM's observed layout");
  }
}

void Scm::check_latent(const StructuredVector& u) const {
  if (!u.layout_ptr() || !(u.layout() == *latent_)) {
    throw DimensionMismatch("vector does not match the SCM's latent layout");
  }
}

Eigen::VectorXd Scm::parent_values(NodeId id, const StructuredVector& x) const {
  return x.extract(graph_.node(id).parents);
}

StructuredVector Scm::reduced_form(const StructuredVector& u) const {
  check_latent(u);
  StructuredVector x = StructuredVector::zeros(observed_);
  for (const auto& id : order_) {
    x.block(id) = mechanisms_[graph_.index_of(id)]->forward(parent_values(id, x), u.block(id));
  }
  return x;
}

Eigen::VectorXd Scm::reduced_form_selected(const StructuredVector& u,
                                           std::span<const NodeId> nodes) const {
  return reduced_form(u).extract(nodes);
}

StructuredVector Scm::abduct(const StructuredVector& x) const {
  check_observed(x);
  StructuredVector u = StructuredVector::zeros(latent_);
  for (const auto& id : order_) {
    u.block(id) = mechanisms_[graph_.index_of(id)]->inverse(parent_values(id, x), x.block(id));
  }
  return u;
}

Eigen::MatrixXd Scm::jacobian_selected(const StructuredVector& u,
                                       std::span<const NodeId> nodes) const {
  check_latent(u);
  for (const auto& id : nodes) {
    if (!graph_.contains(id)) throw DimensionMismatch("jacobian: unknown node in selection");
  }
  const auto relevant = graph_.ancestors_inclusive(nodes);
  std::vector<bool> needed(graph_.size(), false);
  for (const auto& id : relevant) needed[graph_.index_of(id)] = true;

  const StructuredVector x = reduced_form(u);
  // Rows of dF/du for the ancestors of the selection, in observed layout.
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(observed_dim(), latent_dim());
  for (const auto& id : order_) {
    const auto i = graph_.index_of(id);
    if (!needed[i]) continue;
    const auto& mech = *mechanisms_[i];
    const auto& rows = observed_->block(id);
    const auto& cols = latent_->block(id);
    const Eigen::VectorXd pa = parent_values(id, x);
    const auto ui = u.block(id);

    if (cols.size > 0) {
      full.block(rows.offset, cols.offset, rows.size, cols.size) = mech.latent_jacobian(pa, ui);
    }
    const auto& parents = graph_.nodes()[i].parents;
    if (!parents.empty()) {
      const Eigen::MatrixXd dpa = mech.parent_jacobian(pa, ui);
      Eigen::Index col = 0;
      for (const auto& p : parents) {
        const auto& prow = observed_->block(p);
        full.middleRows(rows.offset, rows.size) +=
            dpa.middleCols(col, prow.size) * full.middleRows(prow.offset, prow.size);
        col += prow.size;
      }
    }
  }

  Eigen::MatrixXd out(observed_->size_of(nodes), latent_dim());
  Eigen::Index r = 0;
  for (const auto& id : nodes) {
    const auto& rows = observed_->block(id);
    out.middleRows(r, rows.size) = full.middleRows(rows.offset, rows.size);
    r += rows.size;
  }
  return out;
}

void Scm::validate_antecedent(const Antecedent& antecedent) const {
  if (antecedent.nodes.empty()) throw DimensionMismatch("antecedent must name at least one node");
  std::set<int> seen;
  for (const auto& id : antecedent.nodes) {
    if (!graph_.contains(id)) throw DimensionMismatch("antecedent names an unknown node");
    if (!seen.insert(id.value).second) throw DimensionMismatch("antecedent names a node twice");
  }
  if (antecedent.values.size() != observed_->size_of(antecedent.nodes)) {
    throw DimensionMismatch("antecedent values do not match the node dimensions");
  }
}

// ---------------------------------------------------------------------------

bool ValidationReport::passed() const {
  for (const auto& c : checks) {
    if (!c.passed) return false;
  }
  return true;
}

ValidationReport validate_scm(const CausalGraph& graph, std::span<const MechanismPtr> mechanisms) {
  ValidationReport report;

  ValidationCheck acyclic{"acyclic", true, ""};
  try {
    topological_order(graph);
  } catch (const CyclicGraph& e) {
    acyclic.passed = false;
    acyclic.detail = e.what();
  }
  report.checks.push_back(acyclic);

  ValidationCheck signature{"signature", true, ""};
  if (mechanisms.size() != graph.size()) {
    signature.passed = false;
    signature.detail = "expected one mechanism per node";
  } else {
    for (std::size_t i = 0; i < graph.size() && signature.passed; ++i) {
      if (!mechanisms[i]) {
        signature.passed = false;
        signature.detail = "node '" + graph.nodes()[i].name + "' has no mechanism";
      } else if (auto problem = signature_problem(graph, graph.nodes()[i], *mechanisms[i]);
                 !problem.empty()) {
        signature.passed = false;
        signature.detail = problem;
      }
    }
  }
  report.checks.push_back(signature);

  ValidationCheck round_trip{"round_trip", false, ""};
  if (!acyclic.passed || !signature.passed) {
    round_trip.detail = "skipped: structural checks failed";
  } else {
    try {
      const Scm scm(graph, std::vector<MechanismPtr>(mechanisms.begin(), mechanisms.end()));
      std::mt19937_64 rng(0);
      std::normal_distribution<double> normal(0.0, 1.0);
      double worst = 0.0;
      for (int probe = 0; probe < 16; ++probe) {
        Eigen::VectorXd values(scm.latent_dim());
        for (Eigen::Index k = 0; k < values.size(); ++k) values[k] = normal(rng);
        const auto u = scm.make_latent(values);
        const auto back = scm.abduct(scm.reduced_form(u));
        const double err = values.size() ? (back.values() - values).lpNorm<Eigen::Infinity>() : 0.0;
        worst = std::max(worst, std::isnan(err) ? INFINITY : err);
      }
      round_trip.passed = worst < 1e-8;
      round_trip.detail = "max abs latent error " + std::to_string(worst);
    } catch (const std::exception& e) {
      round_trip.detail = e.what();
    }
  }
  report.checks.push_back(round_trip);
  return report;
}

ValidationReport validate_scm(const Scm& scm) { return validate_scm(scm.graph(), scm.mechanisms()); }

// ---------------------------------------------------------------------------

nlohmann::json scm_to_json(const Scm& scm) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < scm.graph().size(); ++i) {
    const auto& node = scm.graph().nodes()[i];
    nlohmann::json parents = nlohmann::json::array();
    for (const auto& p : node.parents) parents.push_back(p.value);
    nodes.push_back({{"id", node.id.value},
                     {"name", node.name},
                     {"dim", node.dim},
                     {"parents", parents},
                     {"mechanism", scm.mechanisms()[i]->to_json()}});
  }
  return {{"nodes", nodes}};
}

CausalGraph graph_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("nodes") || !j.at("nodes").is_array()) {
    throw FormatError("SCM document needs a 'nodes' array");
  }
  std::vector<NodeSpec> specs;
  for (const auto& n : j.at("nodes")) {
    NodeSpec spec;
    spec.id = NodeId{n.at("id").get<int>()};
    spec.name = n.at("name").get<std::string>();
    spec.dim = n.value("dim", Eigen::Index{1});
    for (const auto& p : n.value("parents", nlohmann::json::array())) {
      spec.parents.push_back(NodeId{p.get<int>()});
    }
    specs.push_back(std::move(spec));
  }
  return CausalGraph(std::move(specs));
}

Scm scm_from_json(const nlohmann::json& j) {
  CausalGraph graph = graph_from_json(j);
  std::vector<MechanismPtr> mechanisms;
  const auto& nodes = j.at("nodes");
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto& spec = graph.nodes()[i];
    const auto& n = nodes[i];
    if (!n.contains("mechanism")) throw FormatError("node '" + spec.name + "' has no mechanism");
    mechanisms.push_back(mechanism_from_json(n.at("mechanism"), parent_dim_of(graph, spec), spec.dim,
                                             static_cast<std::uint64_t>(spec.id.value)));
  }
  return Scm(std::move(graph), std::move(mechanisms));
}

void save_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoFailure("failed writing '" + path.string() + "'");
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace backtrack
