#pragma once

#include "backtrack/scm.hpp"
#include "backtrack/solvers.hpp"

#include <vector>

namespace backtrack {

struct InterventionalResult {
  StructuredVector counterfactual;  // x*
  std::vector<NodeId> intervened;   // S
  StructuredVector latent;          // factual latents u, kept by every other node
};

/// Hard intervention do(x_S = x*_S) with the factual latents: abduction,
/// action, prediction. Throws DimensionMismatch.
InterventionalResult interventional_cf(const Scm& scm, const StructuredVector& x,
                                       const Antecedent& antecedent);

/// Counterfactual explanation in a two-node SCM X -> Y with Y a deterministic
/// predictor of X: mode_deepbc with antecedent {Y = y*}. Returns x*.
/// Throws InvalidGraph if the SCM does not have that shape.
StructuredVector deep_ce(const Scm& two_node_scm, const StructuredVector& x,
                         const Eigen::VectorXd& y_star, const BacktrackingConfig& config);

}  // namespace backtrack
