#include "backtrack/solvers.hpp"

#include "backtrack/errors.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace backtrack {

DistanceFunction weighted_squared_distance() {
  DistanceFunction d;
  d.name = "weighted-squared";
  d.value = [](const ConstVec& r, double w) { return w * r.squaredNorm(); };
  d.gradient = [](const ConstVec& r, double w) -> Eigen::VectorXd { return 2.0 * w * r; };
  d.majorizer = [](const ConstVec& r, double w) -> Eigen::VectorXd {
    return Eigen::VectorXd::Constant(r.size(), w);
  };
  return d;
}

DistanceFunction huber_distance(double delta) {
  if (!(delta > 0.0)) throw Error("huber distance needs delta > 0");
  DistanceFunction d;
  d.name = "huber";
  d.value = [delta](const ConstVec& r, double w) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      const double a = std::abs(r[k]);
      total += a <= delta ? a * a : 2.0 * delta * a - delta * delta;
    }
    return w * total;
  };
  d.gradient = [delta](const ConstVec& r, double w) -> Eigen::VectorXd {
    Eigen::VectorXd g(r.size());
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      g[k] = std::abs(r[k]) <= delta ? 2.0 * r[k] : 2.0 * delta * (r[k] > 0 ? 1.0 : -1.0);
    }
    return w * g;
  };
  // psi(r) / (2 r) for the Huber loss.
  d.majorizer = [delta](const ConstVec& r, double w) -> Eigen::VectorXd {
    Eigen::VectorXd m(r.size());
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      const double a = std::abs(r[k]);
      m[k] = a <= delta ? 1.0 : delta / a;
    }
    return w * m;
  };
  return d;
}

DistanceRegistry::DistanceRegistry() {
  add(weighted_squared_distance());
  add(huber_distance());
  auto smooth = huber_distance();
  smooth.name = "absolute-smooth";
  add(std::move(smooth));
}

void DistanceRegistry::add(DistanceFunction distance) {
  if (distance.name.empty() || !distance.value || !distance.gradient) {
    throw Error("a distance needs a name, a value and a gradient");
  }
  auto name = distance.name;
  kinds_.insert_or_assign(std::move(name), std::move(distance));
}

const DistanceFunction& DistanceRegistry::get(std::string_view kind) const {
  auto it = kinds_.find(kind);
  if (it == kinds_.end()) throw UnknownDistanceKind("unknown distance kind '" + std::string(kind) + "'");
  return it->second;
}

std::vector<std::string> DistanceRegistry::kinds() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : kinds_) out.push_back(name);
  return out;
}

double eval_distance(const DistanceRegistry& registry, std::string_view kind, double weight,
                     const ConstVec& u_prime_i, const ConstVec& u_i) {
  const auto& d = registry.get(kind);
  if (u_prime_i.size() != u_i.size()) throw DimensionMismatch("distance arguments differ in size");
  return d.value(u_prime_i - u_i, weight);
}

double eval_distance(std::string_view kind, double weight, const ConstVec& u_prime_i,
                     const ConstVec& u_i) {
  static const DistanceRegistry builtin;
  return eval_distance(builtin, kind, weight, u_prime_i, u_i);
}

// ---------------------------------------------------------------------------

double BacktrackingConfig::weight(NodeId id) const {
  auto it = weights.find(id);
  return it == weights.end() ? default_weight : it->second;
}

const DistanceFunction& BacktrackingConfig::distance(NodeId id) const {
  auto it = distances.find(id);
  return it == distances.end() ? default_distance : it->second;
}

BacktrackingConfig BacktrackingConfig::mode_defaults() { return {}; }

BacktrackingConfig BacktrackingConfig::stochastic_defaults() {
  BacktrackingConfig c;
  c.lambda = 1e4;
  c.iterations = 1000;
  c.step_size = 1e-5;
  return c;
}

std::size_t CounterfactualResult::changed_count() const {
  return static_cast<std::size_t>(std::count(changed.begin(), changed.end(), true));
}

namespace {

void check_config(const BacktrackingConfig& c) {
  if (!(c.lambda > 0.0) || !std::isfinite(c.lambda)) throw InvalidPlan("lambda must be positive");
  if (c.iterations < 0) throw InvalidPlan("iterations must be non-negative");
  if (c.damping < 0.0) throw InvalidPlan("damping must be non-negative");
  if (c.step_size < 0.0) throw InvalidPlan("step size must be non-negative");
}

void check_latent(const Scm& scm, const StructuredVector& u, const char* what) {
  if (!u.layout_ptr() || !(u.layout() == *scm.latent_layout())) {
    throw DimensionMismatch(std::string(what) + " does not match the SCM's latent layout");
  }
}

/// Coordinates of u whose node is an ancestor-or-self of the antecedent.
std::vector<bool> reaching_coordinates(const Scm& scm, const Antecedent& a) {
  std::vector<bool> reach(static_cast<std::size_t>(scm.latent_dim()), false);
  for (const auto& id : scm.graph().ancestors_inclusive(a.nodes)) {
    const auto& b = scm.latent_layout()->block(id);
    for (Eigen::Index k = 0; k < b.size; ++k) reach[static_cast<std::size_t>(b.offset + k)] = true;
  }
  return reach;
}

/// Diagonal quadratic weights of the distances around u_prime.
Eigen::VectorXd quadratic_weights(const Scm& scm, const StructuredVector& u_prime,
                                  const StructuredVector& u, const BacktrackingConfig& c) {
  Eigen::VectorXd w(scm.latent_dim());
  for (const auto& b : scm.latent_layout()->blocks()) {
    if (b.size == 0) continue;
    const auto& d = c.distance(b.node);
    w.segment(b.offset, b.size) = d.majorizer(u_prime.block(b.node) - u.block(b.node), c.weight(b.node));
  }
  return w;
}

bool quadratic_model_available(const Scm& scm, const BacktrackingConfig& c) {
  for (const auto& b : scm.latent_layout()->blocks()) {
    if (b.size > 0 && !c.distance(b.node).majorizer) return false;
  }
  return true;
}

double residual_of(const Scm& scm, const StructuredVector& u_prime, const Antecedent& a) {
  return (scm.reduced_form_selected(u_prime, a.nodes) - a.values).squaredNorm();
}

std::vector<bool> changed_blocks(const Scm& scm, const StructuredVector& u_prime,
                                 const StructuredVector& u) {
  std::vector<bool> changed;
  for (const auto& node : scm.graph().nodes()) {
    const auto a = u_prime.block(node.id);
    const auto b = u.block(node.id);
    bool differs = false;
    for (Eigen::Index k = 0; k < a.size(); ++k) differs = differs || a[k] != b[k];
    changed.push_back(differs);
  }
  return changed;
}

CounterfactualResult finish(const Scm& scm, StructuredVector u_prime, const StructuredVector& u,
                            const Antecedent& a) {
  CounterfactualResult r;
  r.counterfactual = scm.reduced_form(u_prime);
  r.residual = (r.counterfactual.extract(a.nodes) - a.values).squaredNorm();
  r.changed = changed_blocks(scm, u_prime, u);
  r.latent = std::move(u_prime);
  return r;
}

/// Moore-Penrose solve of a symmetric system, relative eigenvalue cutoff 1e-12.
Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& m, const Eigen::VectorXd& rhs) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericalFailure("eigendecomposition failed");
  const auto& d = eig.eigenvalues();
  const double cutoff = 1e-12 * d.cwiseAbs().maxCoeff();
  Eigen::VectorXd proj = eig.eigenvectors().transpose() * rhs;
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    proj[k] = std::abs(d[k]) > cutoff ? proj[k] / d[k] : 0.0;
  }
  return eig.eigenvectors() * proj;
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

CounterfactualResult first_order(const Scm& scm, const StructuredVector& x, const Antecedent& a,
                                 const BacktrackingConfig& c, const std::vector<bool>* free) {
  check_config(c);
  scm.validate_antecedent(a);
  const StructuredVector u = scm.abduct(x);
  StructuredVector u_prime = u;

  std::vector<double> trace{energy(u_prime, u, a, scm, c)};
  int converged = -1;
  int it = 0;
  for (; it < c.first_order_iterations; ++it) {
    Eigen::VectorXd g = energy_gradient(u_prime, u, a, scm, c);
    if (free) {
      for (Eigen::Index k = 0; k < g.size(); ++k) {
        if (!(*free)[static_cast<std::size_t>(k)]) g[k] = 0.0;
      }
    }
    if (g.size() == 0 || g.lpNorm<Eigen::Infinity>() < c.gradient_tolerance) {
      converged = it;
      break;
    }
    u_prime.values() -= c.learning_rate * g;
    const double e = energy(u_prime, u, a, scm, c);
    if (!std::isfinite(e) || !all_finite(u_prime.values())) {
      throw NonFinite("gradient descent diverged at iteration " + std::to_string(it + 1));
    }
    trace.push_back(e);
  }

  auto r = finish(scm, std::move(u_prime), u, a);
  r.energy_trace = std::move(trace);
  r.iterations = it;
  r.converged_iteration = converged;
  r.damping_used = 0.0;
  return r;
}

CounterfactualResult with_damping_retry(const Scm& scm, const StructuredVector& x,
                                        const Antecedent& a, const BacktrackingConfig& c,
                                        const std::vector<bool>* free) {
  try {
    return detail::mode_deepbc_restricted(scm, x, a, c, free);
  } catch (const OscillationDetected&) {
    if (!c.retry_with_damping || c.damping != 0.0) throw;
  }
  BacktrackingConfig damped = c;
  damped.damping = 1e-8;
  return detail::mode_deepbc_restricted(scm, x, a, damped, free);
}

}  // namespace

double energy(const StructuredVector& u_prime, const StructuredVector& u, const Antecedent& a,
              const Scm& scm, const BacktrackingConfig& c) {
  check_latent(scm, u_prime, "u'");
  check_latent(scm, u, "u");
  double total = 0.0;
  for (const auto& b : scm.latent_layout()->blocks()) {
    if (b.size == 0) continue;
    total += c.distance(b.node).value(u_prime.block(b.node) - u.block(b.node), c.weight(b.node));
  }
  return total + c.lambda * residual_of(scm, u_prime, a);
}

Eigen::VectorXd energy_gradient(const StructuredVector& u_prime, const StructuredVector& u,
                                const Antecedent& a, const Scm& scm, const BacktrackingConfig& c) {
  check_latent(scm, u_prime, "u'");
  check_latent(scm, u, "u");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(scm.latent_dim());
  for (const auto& b : scm.latent_layout()->blocks()) {
    if (b.size == 0) continue;
    g.segment(b.offset, b.size) =
        c.distance(b.node).gradient(u_prime.block(b.node) - u.block(b.node), c.weight(b.node));
  }
  const Eigen::VectorXd r = scm.reduced_form_selected(u_prime, a.nodes) - a.values;
  g += 2.0 * c.lambda * scm.jacobian_selected(u_prime, a.nodes).transpose() * r;
  return g;
}

StructuredVector linearized_update(const StructuredVector& u_bar, const StructuredVector& u,
                                   const Antecedent& a, const Scm& scm,
                                   const Eigen::VectorXd& weights, double lambda, double damping,
                                   const std::vector<bool>* free) {
  check_latent(scm, u_bar, "u_bar");
  check_latent(scm, u, "u");
  scm.validate_antecedent(a);
  const auto n = scm.latent_dim();
  if (weights.size() != n) throw DimensionMismatch("weights must have one entry per latent coordinate");
  if (free && free->size() != static_cast<std::size_t>(n)) {
    throw DimensionMismatch("free mask must have one entry per latent coordinate");
  }
  if (!(lambda > 0.0)) throw InvalidPlan("lambda must be positive");

  const auto reach = reaching_coordinates(scm, a);
  std::vector<Eigen::Index> active;
  Eigen::VectorXd out = u_bar.values();
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (free && !(*free)[kk]) continue;
    if (reach[kk]) {
      active.push_back(k);
    } else {
      // Decoupled coordinate: minimizes its own distance term.
      const double wl = weights[k] / lambda;
      out[k] = damping == 0.0 || wl + damping == 0.0 ? u.values()[k] : wl * u.values()[k] / (wl + damping);
    }
  }

  if (!active.empty()) {
    const Eigen::MatrixXd j = scm.jacobian_selected(u_bar, a.nodes);
    const Eigen::VectorXd f = scm.reduced_form_selected(u_bar, a.nodes);
    const auto m = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd ja(j.rows(), m);
    Eigen::VectorXd ua_bar(m), ua(m), wa(m);
    for (Eigen::Index q = 0; q < m; ++q) {
      ja.col(q) = j.col(active[q]);
      ua_bar[q] = u_bar.values()[active[q]];
      ua[q] = u.values()[active[q]];
      wa[q] = weights[active[q]] / lambda;
    }
    const Eigen::VectorXd diag = wa + Eigen::VectorXd::Constant(m, damping);
    Eigen::VectorXd sol;
    if ((diag.array() > 0.0).all()) {
      // Same system solved for the step away from u, with D = W/lambda + eps I:
      // (D + J^T J)^-1 (J^T r + b) = D^-1 [J^T (I + J D^-1 J^T)^-1 (r - J D^-1 b) + b].
      // Stays accurate when W/lambda is tiny next to J^T J; the normal matrix does not.
      const Eigen::VectorXd r = a.values + ja * (ua_bar - ua) - f;
      const Eigen::VectorXd b = -damping * ua;
      const Eigen::VectorXd dinv = diag.cwiseInverse();
      Eigen::MatrixXd inner = ja * dinv.asDiagonal() * ja.transpose();
      inner.diagonal().array() += 1.0;
      const Eigen::VectorXd z = pinv_solve(inner, r - ja * dinv.cwiseProduct(b));
      sol = ua + dinv.cwiseProduct(ja.transpose() * z + b);
    } else {
      const Eigen::VectorXd x_tilde = a.values + ja * ua_bar - f;
      Eigen::MatrixXd sys = ja.transpose() * ja;
      sys.diagonal() += diag;
      const Eigen::VectorXd rhs = wa.cwiseProduct(ua) + ja.transpose() * x_tilde;
      sol = pinv_solve(sys, rhs);
    }
    for (Eigen::Index q = 0; q < m; ++q) out[active[q]] = sol[q];
  }

  if (!all_finite(out)) throw NumericalFailure("linearized update produced non-finite latents");
  return {scm.latent_layout(), std::move(out)};
}

CounterfactualResult detail::mode_deepbc_restricted(const Scm& scm, const StructuredVector& x,
                                                    const Antecedent& a,
                                                    const BacktrackingConfig& c,
                                                    const std::vector<bool>* free) {
  check_config(c);
  scm.validate_antecedent(a);
  if (!quadratic_model_available(scm, c)) return first_order(scm, x, a, c, free);

  const StructuredVector u = scm.abduct(x);
  StructuredVector u_prime = u;
  std::vector<double> trace{energy(u_prime, u, a, scm, c)};
  int converged = -1;
  int increases = 0;
  int t = 1;
  for (; t <= c.iterations; ++t) {
    const Eigen::VectorXd w = quadratic_weights(scm, u_prime, u, c);
    u_prime = linearized_update(u_prime, u, a, scm, w, c.lambda, c.damping, free);
    const double e = energy(u_prime, u, a, scm, c);
    if (!std::isfinite(e)) throw NumericalFailure("energy became non-finite at iteration " + std::to_string(t));
    const double prev = trace.back();
    trace.push_back(e);
    increases = e > prev + c.energy_tolerance ? increases + 1 : 0;
    if (c.oscillation_window > 0 && increases >= c.oscillation_window) {
      throw OscillationDetected("energy increased for " + std::to_string(increases) +
                                " consecutive iterations");
    }
    if (std::abs(e - prev) < c.energy_tolerance) {
      if (converged < 0) converged = t - 1;
      if (c.stop_on_convergence) break;
    } else {
      converged = -1;
    }
  }

  auto r = finish(scm, std::move(u_prime), u, a);
  r.energy_trace = std::move(trace);
  r.iterations = std::min(t, c.iterations);
  r.converged_iteration = converged;
  r.damping_used = c.damping;
  return r;
}

CounterfactualResult mode_deepbc(const Scm& scm, const StructuredVector& x, const Antecedent& a,
                                 const BacktrackingConfig& c) {
  return with_damping_retry(scm, x, a, c, nullptr);
}

CounterfactualResult mode_deepbc_first_order(const Scm& scm, const StructuredVector& x,
                                             const Antecedent& a, const BacktrackingConfig& c) {
  return first_order(scm, x, a, c, nullptr);
}

std::vector<CounterfactualResult> stochastic_deepbc(const Scm& scm, const StructuredVector& x,
                                                    const Antecedent& a,
                                                    const BacktrackingConfig& c, int n_samples) {
  if (n_samples <= 0) throw InvalidPlan("number of samples must be positive");
  const CounterfactualResult mode = mode_deepbc(scm, x, a, c);
  const StructuredVector u = scm.abduct(x);
  const double mode_energy = mode.final_energy();

  std::vector<CounterfactualResult> samples(static_cast<std::size_t>(n_samples));
  detail::parallel_for(samples.size(), [&](std::size_t k) {
    StructuredVector v = mode.latent;
    int steps = 0;
    if (c.step_size > 0.0) {
      auto rng = detail::stream_rng(c.seed, k);
      std::normal_distribution<double> normal(0.0, 1.0);
      const double noise = std::sqrt(2.0 * c.step_size);
      Eigen::VectorXd b(v.size());
      for (; steps < c.iterations; ++steps) {
        const Eigen::VectorXd g = energy_gradient(v, u, a, scm, c);
        for (Eigen::Index q = 0; q < b.size(); ++q) b[q] = normal(rng);
        v.values() += -c.step_size * g + noise * b;
        if (!all_finite(v.values())) {
          throw NonFinite("Langevin chain " + std::to_string(k) + " diverged at step " +
                          std::to_string(steps + 1));
        }
      }
    }
    auto r = finish(scm, std::move(v), u, a);
    r.energy_trace = {mode_energy, energy(r.latent, u, a, scm, c)};
    r.iterations = steps;
    r.converged_iteration = mode.converged_iteration;
    r.damping_used = mode.damping_used;
    samples[k] = std::move(r);
  });
  return samples;
}

CounterfactualResult sparse_deepbc(const Scm& scm, const StructuredVector& x, const Antecedent& a,
                                   int max_changed, const BacktrackingConfig& c,
                                   const std::vector<NodeId>* selectable) {
  if (max_changed < 1) throw InvalidPlan("sparsity level must be at least 1");
  const CounterfactualResult full = mode_deepbc(scm, x, a, c);
  const StructuredVector u = scm.abduct(x);

  struct Candidate {
    NodeId node;
    double change;
  };
  std::vector<Candidate> candidates;
  for (const auto& b : scm.latent_layout()->blocks()) {
    if (b.size == 0) continue;
    if (selectable && std::find(selectable->begin(), selectable->end(), b.node) == selectable->end()) continue;
    candidates.push_back({b.node, (full.latent.block(b.node) - u.block(b.node)).norm()});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& l, const Candidate& r) {
    if (l.change != r.change) return l.change > r.change;
    return l.node < r.node;
  });
  if (candidates.size() > static_cast<std::size_t>(max_changed)) candidates.resize(static_cast<std::size_t>(max_changed));

  std::vector<bool> free(static_cast<std::size_t>(scm.latent_dim()), false);
  for (const auto& cand : candidates) {
    const auto& b = scm.latent_layout()->block(cand.node);
    for (Eigen::Index k = 0; k < b.size; ++k) free[static_cast<std::size_t>(b.offset + k)] = true;
  }

  CounterfactualResult restricted = with_damping_retry(scm, x, a, c, &free);
  // Residuals under 1e-4 count as an achieved antecedent even when the ratio test trips.
  if (restricted.residual > 10.0 * full.residual && restricted.residual > 1e-4) {
    throw InfeasibleSparsity("keeping " + std::to_string(max_changed) +
                             " latent block(s) leaves residual " + std::to_string(restricted.residual) +
                             ", unrestricted residual " + std::to_string(full.residual));
  }
  return restricted;
}

}  // namespace backtrack
