#include "backtrack/baselines.hpp"
#include "backtrack/errors.hpp"
#include "backtrack/metrics.hpp"
#include "backtrack/solvers.hpp"

#include "test_models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace backtrack;
using namespace backtrack::testing;

namespace {

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }

Scm single_node(double loc, double scale) {
  return Scm(CausalGraph({{NodeId{0}, "A", 1, {}}}), {root_affine(loc, scale)});
}

// Composite Simpson rule of exp(-nll) over [lo, hi].
template <typename F>
double mass(F&& nll, double lo, double hi, int intervals = 20000) {
  const double h = (hi - lo) / intervals;
  double total = std::exp(-nll(lo)) + std::exp(-nll(hi));
  for (int k = 1; k < intervals; ++k) total += (k % 2 ? 4.0 : 2.0) * std::exp(-nll(lo + k * h));
  return total * h / 3.0;
}

const std::vector<NodeId> kA{NodeId{0}};

}  // namespace

TEST(Plausible, StandardNormalAtZero) {
  const auto scm = single_node(0.0, 1.0);
  EXPECT_NEAR(plausible(scm, scm.make_observed(v1(0.0)), kA), 0.5 * std::log(2.0 * M_PI), 1e-12);
  EXPECT_NEAR(plausible(scm, scm.make_observed(v1(0.0)), kA), 0.9189, 1e-4);
}

TEST(Plausible, AffineDensityIntegratesToOne) {
  const auto scm = single_node(0.3, 2.0);
  const double total = mass([&](double a) { return plausible(scm, scm.make_observed(v1(a)), kA); }, -25.0, 25.0);
  EXPECT_NEAR(total, 1.0, 1e-4);
}

TEST(Plausible, ConditionalSigmoidDensityIntegratesToOne) {
  const auto scm = nonlinear_scm();
  const std::vector<NodeId> b{NodeId{1}};
  const double lower = -2.0;
  const double upper = 2.0;
  const double total = mass(
      [&](double v) {
        return plausible(scm, scm.make_observed((Eigen::VectorXd(4) << 0.7, v, 0.0, 0.0).finished()), b);
      },
      lower + 1e-9, upper - 1e-9, 200000);
  EXPECT_NEAR(total, 1.0, 1e-4);
}

TEST(Plausible, TailsIncreaseTheMetric) {
  const auto scm = single_node(0.0, 2.0);
  double previous = plausible(scm, scm.make_observed(v1(0.0)), kA);
  for (double a = 0.5; a <= 10.0; a += 0.5) {
    const double next = plausible(scm, scm.make_observed(v1(a)), kA);
    EXPECT_GT(next, previous);
    previous = next;
  }
}

TEST(Plausible, OutsideRangeThrows) {
  const auto scm = nonlinear_scm();
  const std::vector<NodeId> b{NodeId{1}};
  EXPECT_THROW(plausible(scm, scm.make_observed(Eigen::Vector4d(0.0, 5.0, 0.0, 0.0)), b), InversionFailure);
}

TEST(ObsDistance, Arithmetic) {
  const auto scm = linear_chain();
  const auto x = scm.make_observed(Eigen::Vector2d(0.0, 0.0));
  const auto xs = scm.make_observed(Eigen::Vector2d(1.0, -2.0));
  const std::vector<NodeId> both{NodeId{1}, NodeId{2}};
  EXPECT_EQ(obs_distance(x, x, InnerDistance::kSqu, both), 0.0);
  EXPECT_DOUBLE_EQ(obs_distance(x, xs, InnerDistance::kSqu, both), 2.5);
  EXPECT_DOUBLE_EQ(obs_distance(x, xs, InnerDistance::kAbs, both), 1.5);
}

TEST(ObsDistance, VectorBlocksUseNorms) {
  const auto scm = nonlinear_scm();
  const auto x = scm.make_observed(Eigen::Vector4d(0.0, 0.0, 0.0, 0.0));
  const auto xs = scm.make_observed(Eigen::Vector4d(0.0, 0.0, 3.0, -4.0));
  const std::vector<NodeId> c{NodeId{2}};
  EXPECT_DOUBLE_EQ(obs_distance(x, xs, InnerDistance::kSqu, c), 25.0);
  EXPECT_DOUBLE_EQ(obs_distance(x, xs, InnerDistance::kAbs, c), 7.0);
  EXPECT_THROW(obs_distance(x, linear_chain().make_observed(Eigen::Vector2d(0, 0)), InnerDistance::kSqu, c),
               DimensionMismatch);
}

TEST(CausalDistance, IdentityIsZero) {
  const auto scm = nonlinear_scm();
  const auto x = scm.reduced_form(scm.make_latent(Eigen::Vector4d(0.2, 0.4, -0.3, 0.1)));
  const std::vector<NodeId> all{NodeId{0}, NodeId{1}, NodeId{2}};
  EXPECT_EQ(causal_distance(scm, x, x, InnerDistance::kSqu, all), 0.0);
  EXPECT_EQ(causal_distance(scm, x, x, InnerDistance::kAbs, all), 0.0);
  const auto report = evaluate_metrics(scm, x, x, InnerDistance::kSqu, all);
  EXPECT_EQ(report.obs, 0.0);
  EXPECT_EQ(report.causal, 0.0);
  EXPECT_EQ(report.n, 3u);
}

TEST(CausalDistance, InterventionalChainMovesOnlyAntecedentLatent) {
  const auto scm = linear_chain(1.0);
  const auto x = scm.make_observed(Eigen::Vector2d(0.5, 1.0));  // u = (0.5, 0.5)
  const auto iv = interventional_cf(scm, x, {{NodeId{2}}, v1(3.0)});
  const std::vector<NodeId> both{NodeId{1}, NodeId{2}};
  // u*_2 = 3 - 0.5 = 2.5, u_2 = 0.5.
  EXPECT_DOUBLE_EQ(causal_distance(scm, x, iv.counterfactual, InnerDistance::kSqu, both), 4.0 / 2.0);
  EXPECT_DOUBLE_EQ(causal_distance(scm, x, iv.counterfactual, InnerDistance::kAbs, both), 2.0 / 2.0);
}

TEST(CausalDistance, ModeDominatesInterventional) {
  const auto scm = linear_chain(1.0);
  const auto x = scm.make_observed(Eigen::Vector2d(0.5, 1.0));
  const Antecedent a{{NodeId{2}}, v1(3.0)};
  const std::vector<NodeId> both{NodeId{1}, NodeId{2}};
  BacktrackingConfig c;
  const auto mode = mode_deepbc(scm, x, a, c);
  const auto iv = interventional_cf(scm, x, a);
  EXPECT_LE(causal_distance(scm, x, mode.counterfactual, InnerDistance::kSqu, both),
            causal_distance(scm, x, iv.counterfactual, InnerDistance::kSqu, both) + 1e-3);
}

TEST(InnerDistance, Parsing) {
  EXPECT_EQ(parse_inner_distance("squ"), InnerDistance::kSqu);
  EXPECT_EQ(parse_inner_distance("ABS"), InnerDistance::kAbs);
  EXPECT_EQ(to_string(InnerDistance::kAbs), "ABS");
  EXPECT_THROW(parse_inner_distance("L7"), UnknownDistanceKind);
}
