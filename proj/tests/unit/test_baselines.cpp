#include "backtrack/baselines.hpp"
#include "backtrack/errors.hpp"
#include "backtrack/solvers.hpp"

#include "test_models.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace backtrack;
using namespace backtrack::testing;

namespace {

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }

BacktrackingConfig cfg(double lambda) {
  BacktrackingConfig c;
  c.lambda = lambda;
  return c;
}

// X (dim 3, identity flow) -> Y = w^T X.
Scm explanation_scm(const Eigen::Vector3d& w) {
  CausalGraph g({{NodeId{0}, "X", 3, {}}, {NodeId{1}, "Y", 1, {NodeId{0}}}});
  auto x = std::make_shared<AffineFlow>(AffineFlow::constant(Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones()));
  auto y = std::make_shared<PredictorMechanism>(Conditioner::linear(w.transpose(), v1(0.0)), 3);
  return Scm(std::move(g), {x, y});
}

double distance_sum(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).squaredNorm(); }

}  // namespace

TEST(InterventionalCf, ChainLeavesUpstreamAlone) {
  const auto scm = linear_chain(1.0);
  const auto x = scm.make_observed(Eigen::Vector2d(0.7, 1.5));
  const auto r = interventional_cf(scm, x, {{NodeId{2}}, v1(4.0)});
  EXPECT_EQ(r.counterfactual.values(), Eigen::Vector2d(0.7, 4.0));
  EXPECT_EQ(r.intervened, std::vector<NodeId>{NodeId{2}});
  EXPECT_EQ(r.latent.values(), scm.abduct(x).values());
}

TEST(InterventionalCf, FactualAntecedentIsNoOp) {
  const auto scm = nonlinear_scm();
  const auto x = scm.reduced_form(scm.make_latent(Eigen::Vector4d(0.2, -0.1, 0.4, 0.3)));
  const auto r = interventional_cf(scm, x, {{NodeId{1}}, x.block(NodeId{1})});
  EXPECT_EQ(r.counterfactual.values(), x.values());
}

TEST(InterventionalCf, NodesWithoutPathFromSUnchanged) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const auto scm = random_affine_scm(5, rng);
    Eigen::VectorXd u(5);
    for (auto& v : u) v = normal(rng);
    const auto x = scm.reduced_form(scm.make_latent(u));
    const NodeId s{trial % 5};
    const auto r = interventional_cf(scm, x, {{s}, v1(normal(rng))});
    const std::vector<NodeId> src{s};
    const auto affected = scm.graph().descendants_inclusive(src);
    for (const auto& node : scm.graph().nodes()) {
      if (std::find(affected.begin(), affected.end(), node.id) != affected.end()) continue;
      EXPECT_EQ(r.counterfactual.block(node.id)[0], x.block(node.id)[0]);
    }
  }
}

TEST(InterventionalCf, AbductedResultIsFeasible) {
  const auto scm = nonlinear_scm();
  const auto x = scm.reduced_form(scm.make_latent(Eigen::Vector4d(0.2, -0.1, 0.4, 0.3)));
  const Antecedent a{{NodeId{1}}, v1(1.2)};
  const auto r = interventional_cf(scm, x, a);
  const auto u_prime = scm.abduct(r.counterfactual);
  EXPECT_LT((scm.reduced_form_selected(u_prime, a.nodes) - a.values).norm(), 1e-10);
}

TEST(InterventionalCf, RootAntecedentMatchesMode) {
  const auto scm = nonlinear_scm();
  const auto x = scm.reduced_form(scm.make_latent(Eigen::Vector4d(0.2, -0.1, 0.4, 0.3)));
  for (double t : {-2.0, 0.0, 1.0, 3.5}) {
    const Antecedent a{{NodeId{0}}, v1(t)};
    const auto iv = interventional_cf(scm, x, a);
    const auto mode = mode_deepbc(scm, x, a, cfg(1e8));
    EXPECT_LT((iv.counterfactual.values() - mode.counterfactual.values()).lpNorm<Eigen::Infinity>(), 1e-5);
  }
}

TEST(InterventionalCf, ModeIsNoFartherThanTheFeasibleInterventionalPoint) {
  const auto scm = nonlinear_scm();
  std::mt19937_64 rng(43);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector4d u0(normal(rng), normal(rng), normal(rng), normal(rng));
    const auto x = scm.reduced_form(scm.make_latent(u0));
    const Antecedent a{{NodeId{1}}, v1(std::clamp(x.block(NodeId{1})[0] + normal(rng), -1.9, 1.9))};
    const auto u = scm.abduct(x);
    const auto mode = mode_deepbc(scm, x, a, cfg(1e3));
    const auto iv = scm.abduct(interventional_cf(scm, x, a).counterfactual);
    EXPECT_LE(distance_sum(mode.latent.values(), u.values()), distance_sum(iv.values(), u.values()) + 1e-3);
  }
}

TEST(InterventionalCf, RejectsMismatchedFactual) {
  const auto scm = linear_chain();
  const auto other = three_chain();
  EXPECT_THROW(interventional_cf(scm, other.make_observed(Eigen::Vector3d::Zero()), {{NodeId{2}}, v1(1.0)}),
               DimensionMismatch);
}

TEST(DeepCe, HyperplaneProjection) {
  const Eigen::Vector3d w(1.0, -2.0, 0.5);
  const auto scm = explanation_scm(w);
  Eigen::Vector4d xv;
  xv << 0.3, 0.8, -1.1, 0.0;
  xv[3] = w.dot(xv.head<3>());
  const auto x = scm.make_observed(xv);
  const double y_star = 2.0;
  const auto x_star = deep_ce(scm, x, v1(y_star), cfg(1e3));
  const Eigen::Vector3d oracle = xv.head<3>() + w * (y_star - w.dot(xv.head<3>())) / w.squaredNorm();
  EXPECT_LT((x_star.block(NodeId{0}) - oracle).lpNorm<Eigen::Infinity>(), 1e-3);
}

TEST(DeepCe, SatisfiedTargetKeepsFactual) {
  const Eigen::Vector3d w(1.0, 1.0, 1.0);
  const auto scm = explanation_scm(w);
  const auto x = scm.make_observed(Eigen::Vector4d(1.0, 2.0, 3.0, 6.0));
  EXPECT_LT((deep_ce(scm, x, v1(6.0), cfg(1e3)).values() - x.values()).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(DeepCe, EqualsModeDeepbcBitwise) {
  const Eigen::Vector3d w(0.4, 0.2, -0.9);
  const auto scm = explanation_scm(w);
  const auto x = scm.make_observed(Eigen::Vector4d(1.0, -0.5, 0.25, 0.4 - 0.1 - 0.225));
  const auto ce = deep_ce(scm, x, v1(-1.0), cfg(1e3));
  const auto mode = mode_deepbc(scm, x, {{NodeId{1}}, v1(-1.0)}, cfg(1e3));
  EXPECT_EQ(ce.values(), mode.counterfactual.values());
}

TEST(DeepCe, RequiresTwoNodePredictorShape) {
  const auto chain = linear_chain();
  EXPECT_THROW(deep_ce(chain, chain.make_observed(Eigen::Vector2d(0, 0)), v1(1.0), cfg(1e3)), InvalidGraph);
}
