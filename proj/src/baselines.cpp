#include "backtrack/baselines.hpp"

#include "backtrack/errors.hpp"

namespace backtrack {

InterventionalResult interventional_cf(const Scm& scm, const StructuredVector& x,
                                       const Antecedent& a) {
  scm.validate_antecedent(a);
  InterventionalResult r;
  r.latent = scm.abduct(x);
  r.intervened = a.nodes;

  // Unpack the antecedent once so each assignment can be swapped for its constant.
  StructuredVector target = StructuredVector::zeros(scm.observed_layout());
  target.assign(a.nodes, a.values);
  std::vector<bool> fixed(scm.graph().size(), false);
  for (const auto& id : a.nodes) fixed[scm.graph().index_of(id)] = true;
  // Nodes outside the descendants of S keep their factual values verbatim.
  std::vector<bool> affected(scm.graph().size(), false);
  for (const auto& id : scm.graph().descendants_inclusive(a.nodes)) affected[scm.graph().index_of(id)] = true;

  r.counterfactual = StructuredVector::zeros(scm.observed_layout());
  for (const auto& id : scm.order()) {
    const auto k = scm.graph().index_of(id);
    if (fixed[k]) {
      r.counterfactual.block(id) = target.block(id);
    } else if (!affected[k]) {
      r.counterfactual.block(id) = x.block(id);
    } else {
      r.counterfactual.block(id) =
          scm.mechanism(id).forward(scm.parent_values(id, r.counterfactual), r.latent.block(id));
    }
  }
  return r;
}

StructuredVector deep_ce(const Scm& scm, const StructuredVector& x, const Eigen::VectorXd& y_star,
                         const BacktrackingConfig& config) {
  const auto& nodes = scm.graph().nodes();
  if (nodes.size() != 2) throw InvalidGraph("deep_ce needs an SCM with exactly two nodes");
  const NodeSpec* input = nullptr;
  const NodeSpec* output = nullptr;
  for (const auto& n : nodes) (n.parents.empty() ? input : output) = &n;
  if (!input || !output || output->parents.size() != 1 || output->parents[0] != input->id) {
    throw InvalidGraph("deep_ce needs the shape X -> Y");
  }
  if (scm.mechanism(output->id).kind() != MechanismKind::kPredictor) {
    throw InvalidGraph("deep_ce needs Y to be a deterministic predictor of X");
  }
  const Antecedent a{{output->id}, y_star};
  return mode_deepbc(scm, x, a, config).counterfactual;
}

}  // namespace backtrack
