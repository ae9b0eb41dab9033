#include "backtrack/metrics.hpp"

#include "backtrack/errors.hpp"

#include <algorithm>
#include <cctype>

namespace backtrack {
namespace {

double apply(InnerDistance m, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return m == InnerDistance::kSqu ? (a - b).squaredNorm() : (a - b).lpNorm<1>();
}

void check_attributes(const BlockLayout& layout, std::span<const NodeId> attributes) {
  if (attributes.empty()) throw DimensionMismatch("metrics need at least one attribute node");
  for (const auto& id : attributes) {
    if (!layout.contains(id)) throw DimensionMismatch("metric attribute is not a node of the layout");
  }
}

void check_same_layout(const StructuredVector& x, const StructuredVector& x_star) {
  if (!x.layout_ptr() || !x_star.layout_ptr() || !(x.layout() == x_star.layout())) {
    throw DimensionMismatch("factual and counterfactual layouts differ");
  }
}

}  // namespace

std::string to_string(InnerDistance m) { return m == InnerDistance::kSqu ? "SQU" : "ABS"; }

InnerDistance parse_inner_distance(const std::string& text) {
  std::string upper = text;
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  if (upper == "SQU") return InnerDistance::kSqu;
  if (upper == "ABS") return InnerDistance::kAbs;
  throw UnknownDistanceKind("unknown inner distance '" + text + "' (expected SQU or ABS)");
}

double plausible(const Scm& scm, const StructuredVector& x_star, std::span<const NodeId> attributes) {
  check_attributes(*scm.observed_layout(), attributes);
  if (!(x_star.layout() == *scm.observed_layout())) throw DimensionMismatch("x* does not match the SCM");
  double total = 0.0;
  for (const auto& id : attributes) {
    total += scm.mechanism(id).negative_log_density(scm.parent_values(id, x_star), x_star.block(id));
  }
  return total / static_cast<double>(attributes.size());
}

double obs_distance(const StructuredVector& x, const StructuredVector& x_star, InnerDistance m,
                    std::span<const NodeId> attributes) {
  check_same_layout(x, x_star);
  check_attributes(x.layout(), attributes);
  double total = 0.0;
  for (const auto& id : attributes) total += apply(m, x.block(id), x_star.block(id));
  return total / static_cast<double>(attributes.size());
}

double causal_distance(const Scm& scm, const StructuredVector& x, const StructuredVector& x_star,
                       InnerDistance m, std::span<const NodeId> attributes) {
  check_same_layout(x, x_star);
  check_attributes(*scm.observed_layout(), attributes);
  if (!(x.layout() == *scm.observed_layout())) throw DimensionMismatch("x does not match the SCM");
  double total = 0.0;
  for (const auto& id : attributes) {
    const auto& mech = scm.mechanism(id);
    const Eigen::VectorXd u = mech.inverse(scm.parent_values(id, x), x.block(id));
    const Eigen::VectorXd u_star = mech.inverse(scm.parent_values(id, x_star), x_star.block(id));
    total += apply(m, u, u_star);
  }
  return total / static_cast<double>(attributes.size());
}

MetricReport evaluate_metrics(const Scm& scm, const StructuredVector& x, const StructuredVector& x_star,
                              InnerDistance m, std::span<const NodeId> attributes) {
  MetricReport r;
  r.plausible = plausible(scm, x_star, attributes);
  r.obs = obs_distance(x, x_star, m, attributes);
  r.causal = causal_distance(scm, x, x_star, m, attributes);
  r.m = m;
  r.n = attributes.size();
  return r;
}

}  // namespace backtrack
