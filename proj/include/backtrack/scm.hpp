#pragma once

#include "backtrack/graph.hpp"
#include "backtrack/mechanisms.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace backtrack {

/// Target values x*_S for a subset S of nodes.
struct Antecedent {
  std::vector<NodeId> nodes;
  /// Concatenated blocks of `nodes`, in that order.
  Eigen::VectorXd values;
};

/// A causal graph with one invertible mechanism per node.
///
/// Immutable after construction. Observables and latents use separate block
/// layouts: categorical nodes carry K-1 latents for K observed coordinates and
/// predictor nodes carry none.
class Scm {
 public:
  /// `mechanisms[i]` belongs to `graph.nodes()[i]`. Throws CyclicGraph or
  /// DimensionMismatch if the wiring is inconsistent.
  Scm(CausalGraph graph, std::vector<MechanismPtr> mechanisms);

  const CausalGraph& graph() const { return graph_; }
  std::span<const NodeId> order() const { return order_; }
  const Mechanism& mechanism(NodeId id) const { return *mechanisms_[graph_.index_of(id)]; }
  std::span<const MechanismPtr> mechanisms() const { return mechanisms_; }

  const LayoutPtr& observed_layout() const { return observed_; }
  const LayoutPtr& latent_layout() const { return latent_; }
  Eigen::Index observed_dim() const { return observed_->total_size(); }
  Eigen::Index latent_dim() const { return latent_->total_size(); }

  StructuredVector make_observed(Eigen::VectorXd values) const { return {observed_, std::move(values)}; }
  StructuredVector make_latent(Eigen::VectorXd values) const { return {latent_, std::move(values)}; }

  /// Concatenated parent blocks of `id` taken from `x`, in parent-list order.
  Eigen::VectorXd parent_values(NodeId id, const StructuredVector& x) const;

  /// F(u), evaluated in topological order.
  StructuredVector reduced_form(const StructuredVector& u) const;
  /// F_S(u): the blocks of `nodes` in the reduced form.
  Eigen::VectorXd reduced_form_selected(const StructuredVector& u, std::span<const NodeId> nodes) const;
  /// F^{-1}(x): u_i = f_i^{-1}(x_pa(i), x_i).
  StructuredVector abduct(const StructuredVector& x) const;
  /// dF_S/du at u, dim(x_S) x dim(u), assembled by the chain rule.
  Eigen::MatrixXd jacobian_selected(const StructuredVector& u, std::span<const NodeId> nodes) const;

  /// Checks that an antecedent names distinct existing nodes with matching sizes.
  void validate_antecedent(const Antecedent& antecedent) const;

 private:
  void check_observed(const StructuredVector& x) const;
  void check_latent(const StructuredVector& u) const;

  CausalGraph graph_;
  std::vector<MechanismPtr> mechanisms_;
  std::vector<NodeId> order_;
  LayoutPtr observed_;
  LayoutPtr latent_;
};

struct ValidationCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool passed() const;
};

/// Acyclicity, mechanism signatures and round-trip inversion on 16 seeded
/// standard-normal probes. Never throws for model defects; they are reported.
ValidationReport validate_scm(const CausalGraph& graph, std::span<const MechanismPtr> mechanisms);
ValidationReport validate_scm(const Scm& scm);

// ---------------------------------------------------------------------------
// JSON form: {"nodes": [{"id", "name", "dim", "parents", "mechanism"}]}.

nlohmann::json scm_to_json(const Scm& scm);
Scm scm_from_json(const nlohmann::json& j);
/// Graph part of an SCM document; mechanism entries are ignored.
CausalGraph graph_from_json(const nlohmann::json& j);

void save_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace backtrack
