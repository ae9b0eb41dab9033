#pragma once

// Small hand-built SCMs shared by the unit and acceptance tests.

#include "backtrack/mechanisms.hpp"
#include "backtrack/scm.hpp"

#include <Eigen/Dense>

#include <memory>
#include <random>
#include <vector>

namespace backtrack::testing {

inline MechanismPtr root_affine(double loc, double scale) {
  return std::make_shared<AffineFlow>(AffineFlow::constant(Eigen::VectorXd::Constant(1, loc),
                                                           Eigen::VectorXd::Constant(1, scale)));
}

/// x = sum_k coef_k * parent_k + offset + scale * u.
inline MechanismPtr linear_affine(const std::vector<double>& coef, double offset, double scale) {
  Eigen::MatrixXd w(1, static_cast<Eigen::Index>(coef.size()));
  for (std::size_t k = 0; k < coef.size(); ++k) w(0, static_cast<Eigen::Index>(k)) = coef[k];
  auto loc = Conditioner::linear(w, Eigen::VectorXd::Constant(1, offset));
  auto log_scale = Conditioner::constant(Eigen::VectorXd::Constant(1, std::log(scale)));
  return std::make_shared<AffineFlow>(std::move(loc), std::move(log_scale),
                                      static_cast<Eigen::Index>(coef.size()));
}

/// X1 -> X2 with x1 = u1, x2 = a x1 + u2.
inline Scm linear_chain(double a = 1.0) {
  CausalGraph g({{NodeId{1}, "X1", 1, {}}, {NodeId{2}, "X2", 1, {NodeId{1}}}});
  return Scm(std::move(g), {root_affine(0.0, 1.0), linear_affine({a}, 0.0, 1.0)});
}

/// X1 -> X2 -> X3 with x1 = u1, x2 = a x1 + u2, x3 = b x2 + u3.
inline Scm three_chain(double a = 1.0, double b = 1.0) {
  CausalGraph g({{NodeId{1}, "X1", 1, {}},
                 {NodeId{2}, "X2", 1, {NodeId{1}}},
                 {NodeId{3}, "X3", 1, {NodeId{2}}}});
  return Scm(std::move(g), {root_affine(0.0, 1.0), linear_affine({a}, 0.0, 1.0), linear_affine({b}, 0.0, 1.0)});
}

/// Nonlinear three-node SCM: affine root, sigmoid child, tanh-mlp affine grandchild.
inline Scm nonlinear_scm() {
  CausalGraph g({{NodeId{0}, "A", 1, {}},
                 {NodeId{1}, "B", 1, {NodeId{0}}},
                 {NodeId{2}, "C", 2, {NodeId{0}, NodeId{1}}}});
  auto b = std::make_shared<SigmoidFlow>(
      Eigen::VectorXd::Constant(1, -2.0), Eigen::VectorXd::Constant(1, 4.0),
      Eigen::VectorXd::Constant(1, std::log(0.7)),
      Conditioner::linear(Eigen::MatrixXd::Constant(1, 1, 1.3), Eigen::VectorXd::Constant(1, 0.2)), 1);
  Eigen::MatrixXd w1(3, 2);
  w1 << 0.5, -0.3, 0.2, 0.8, -0.6, 0.1;
  Eigen::MatrixXd w2(2, 3);
  w2 << 0.7, -0.4, 0.3, 0.2, 0.5, -0.9;
  auto loc = Conditioner::mlp(w1, Eigen::Vector3d(0.1, -0.2, 0.05), w2, Eigen::Vector2d(0.3, -0.1));
  Eigen::MatrixXd ws(2, 2);
  ws << 0.1, -0.2, 0.15, 0.05;
  auto log_scale = Conditioner::linear(ws, Eigen::Vector2d(-0.1, 0.2));
  auto c = std::make_shared<AffineFlow>(std::move(loc), std::move(log_scale), 2);
  return Scm(std::move(g), {root_affine(0.5, 1.5), b, c});
}

/// Random DAG of `n` scalar affine nodes; edge probability 0.5, coefficients in [-1.5, 1.5].
inline Scm random_affine_scm(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coef(-1.5, 1.5);
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  std::bernoulli_distribution edge(0.5);
  std::vector<NodeSpec> specs;
  std::vector<MechanismPtr> mechs;
  for (int i = 0; i < n; ++i) {
    NodeSpec s{NodeId{i}, "N" + std::to_string(i), 1, {}};
    std::vector<double> c;
    for (int p = 0; p < i; ++p) {
      if (edge(rng)) {
        s.parents.push_back(NodeId{p});
        c.push_back(coef(rng));
      }
    }
    const double offset = coef(rng);
    const double sc = scale(rng);
    mechs.push_back(c.empty() ? root_affine(offset, sc) : linear_affine(c, offset, sc));
    specs.push_back(std::move(s));
  }
  return Scm(CausalGraph(std::move(specs)), std::move(mechs));
}

/// Dense reduced-form matrix of an affine SCM: F(u) = M u + c.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> affine_reduced_form(const Scm& scm) {
  const auto n = scm.latent_dim();
  const Eigen::VectorXd c = scm.reduced_form(scm.make_latent(Eigen::VectorXd::Zero(n))).values();
  Eigen::MatrixXd m(scm.observed_dim(), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    m.col(k) = scm.reduced_form(scm.make_latent(Eigen::VectorXd::Unit(n, k))).values() - c;
  }
  return {m, c};
}

}  // namespace backtrack::testing
