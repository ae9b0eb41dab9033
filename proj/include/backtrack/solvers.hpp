#pragma once

#include "backtrack/scm.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace backtrack {

// ---------------------------------------------------------------------------
// Backtracking distances d_i(u'_i, u_i), expressed on the offset u'_i - u_i.

struct DistanceFunction {
  std::string name;
  std::function<double(const ConstVec& offset, double weight)> value;
  /// Gradient with respect to u'_i.
  std::function<Eigen::VectorXd(const ConstVec& offset, double weight)> gradient;
  /// Optional per-coordinate weights m such that sum_k m_k offset_k^2 majorizes
  /// the distance and touches it at `offset`. Distances providing this are
  /// minimized by reweighted constraint linearization; the others by gradient
  /// descent.
  std::function<Eigen::VectorXd(const ConstVec& offset, double weight)> majorizer;

  bool is_weighted_squared() const { return name == "weighted-squared"; }
};

/// w * ||offset||^2.
DistanceFunction weighted_squared_distance();
/// w * sum_k h(offset_k), h(r) = r^2 for |r| <= delta, 2 delta |r| - delta^2 beyond.
DistanceFunction huber_distance(double delta = 0.1);

/// Name -> distance lookup. Holds the built-ins ("weighted-squared", and
/// "huber" / "absolute-smooth" for the delta = 0.1 Huber loss) and any
/// caller-registered kinds.
class DistanceRegistry {
 public:
  DistanceRegistry();
  void add(DistanceFunction distance);
  /// Throws UnknownDistanceKind.
  const DistanceFunction& get(std::string_view kind) const;
  std::vector<std::string> kinds() const;

 private:
  std::map<std::string, DistanceFunction, std::less<>> kinds_;
};

/// d_i(u'_i, u_i) for a built-in kind. Throws UnknownDistanceKind.
double eval_distance(std::string_view kind, double weight, const ConstVec& u_prime_i,
                     const ConstVec& u_i);
double eval_distance(const DistanceRegistry& registry, std::string_view kind, double weight,
                     const ConstVec& u_prime_i, const ConstVec& u_i);

// ---------------------------------------------------------------------------

struct BacktrackingConfig {
  /// Penalty on ||F_S(u') - x*_S||^2.
  double lambda = 1e3;
  /// Outer iterations of the linearized solver, or Langevin steps.
  int iterations = 30;
  /// Langevin step size.
  double step_size = 1e-5;
  /// Damping added to the linearized system; 0 reproduces the plain update.
  double damping = 0.0;
  /// Retry once with damping 1e-8 if oscillation is detected at damping 0.
  bool retry_with_damping = true;
  /// Stop the linearized solver once |E_t - E_{t-1}| falls below this.
  double energy_tolerance = 1e-10;
  bool stop_on_convergence = true;
  /// Consecutive energy increases that count as oscillation.
  int oscillation_window = 5;

  /// Gradient-descent variant.
  double learning_rate = 1e-3;
  int first_order_iterations = 10000;
  double gradient_tolerance = 1e-12;

  double default_weight = 1.0;
  std::map<NodeId, double> weights;
  DistanceFunction default_distance = weighted_squared_distance();
  std::map<NodeId, DistanceFunction> distances;

  std::uint64_t seed = 0;

  double weight(NodeId id) const;
  const DistanceFunction& distance(NodeId id) const;

  /// lambda = 1e3, T = 30.
  static BacktrackingConfig mode_defaults();
  /// lambda = 1e4, T = 1000, eta = 1e-5.
  static BacktrackingConfig stochastic_defaults();
};

struct CounterfactualResult {
  StructuredVector latent;          // u*
  StructuredVector counterfactual;  // x* = F(u*)
  /// ||F_S(u*) - x*_S||^2.
  double residual = 0.0;
  /// Energy at the start (index 0) and after every iteration.
  std::vector<double> energy_trace;
  int iterations = 0;
  /// Last iteration that changed the energy by more than the tolerance;
  /// -1 if the solver never met the stopping rule.
  int converged_iteration = -1;
  double damping_used = 0.0;
  /// Per node (graph order): latent block differs from the factual one.
  std::vector<bool> changed;

  double final_energy() const { return energy_trace.empty() ? 0.0 : energy_trace.back(); }
  std::size_t changed_count() const;
};

/// L(u') = sum_i d_i(u'_i, u_i) + lambda ||F_S(u') - x*_S||^2.
double energy(const StructuredVector& u_prime, const StructuredVector& u,
              const Antecedent& antecedent, const Scm& scm, const BacktrackingConfig& config);
/// Analytic gradient of energy() with respect to u'.
Eigen::VectorXd energy_gradient(const StructuredVector& u_prime, const StructuredVector& u,
                                const Antecedent& antecedent, const Scm& scm,
                                const BacktrackingConfig& config);

/// One closed-form step of constraint linearization around u_bar:
///   (W/lambda + J^T J + eps I)^+ (W u / lambda + J^T x~),  x~ = x* + J u_bar - F_S(u_bar).
/// `weights` is the diagonal of W (one entry per latent coordinate). When
/// `free` is given, only coordinates with free[k] move; the others keep u_bar.
/// Latent coordinates with no path into S are solved in closed form.
/// Throws NumericalFailure on non-finite output.
StructuredVector linearized_update(const StructuredVector& u_bar, const StructuredVector& u,
                                   const Antecedent& antecedent, const Scm& scm,
                                   const Eigen::VectorXd& weights, double lambda, double damping,
                                   const std::vector<bool>* free = nullptr);

/// Most likely backtracking counterfactual via iterated constraint
/// linearization, started at abduct(x). Distances with neither the squared
/// form nor a majorizer are routed to mode_deepbc_first_order().
CounterfactualResult mode_deepbc(const Scm& scm, const StructuredVector& x,
                                 const Antecedent& antecedent, const BacktrackingConfig& config);

/// Plain gradient descent on the energy from abduct(x).
CounterfactualResult mode_deepbc_first_order(const Scm& scm, const StructuredVector& x,
                                             const Antecedent& antecedent,
                                             const BacktrackingConfig& config);

/// Langevin samples of exp(-L): every chain starts at the mode and runs
/// config.iterations Euler-Maruyama steps. Chain k draws from its own
/// generator seeded by (config.seed, k).
std::vector<CounterfactualResult> stochastic_deepbc(const Scm& scm, const StructuredVector& x,
                                                    const Antecedent& antecedent,
                                                    const BacktrackingConfig& config,
                                                    int n_samples);

/// Two-pass sparse variant: solve the mode, keep the `max_changed` latent
/// blocks that moved most (ties by node id), and solve again with every
/// other block frozen at its factual value. `selectable`, if given, limits
/// which blocks may be kept. Throws InfeasibleSparsity if the restricted
/// residual exceeds ten times the unrestricted one.
CounterfactualResult sparse_deepbc(const Scm& scm, const StructuredVector& x,
                                   const Antecedent& antecedent, int max_changed,
                                   const BacktrackingConfig& config,
                                   const std::vector<NodeId>* selectable = nullptr);

namespace detail {
/// Runs the linearized solver with the given free mask (nullptr: all free).
CounterfactualResult mode_deepbc_restricted(const Scm& scm, const StructuredVector& x,
                                            const Antecedent& antecedent,
                                            const BacktrackingConfig& config,
                                            const std::vector<bool>* free);
}  // namespace detail

}  // namespace backtrack
