#include "backtrack/baselines.hpp"
#include "backtrack/dataset.hpp"
#include "backtrack/errors.hpp"
#include "backtrack/harness.hpp"
#include "backtrack/metrics.hpp"
#include "backtrack/morpho.hpp"

#include "morpho_fixture.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace backtrack;
using namespace backtrack::testing;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "backtrack_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k] / n;
    mb += b[k] / n;
  }
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Antecedent data_antecedent(NodeId id, double v) { return {{id}, Eigen::VectorXd::Constant(1, v)}; }

const NodeId kT{0};
const NodeId kI{1};

}  // namespace

// ---------------------------------------------------------------------------
// Ground-truth generator

TEST(GroundTruth, ThicknessMeanAndSupport) {
  const auto gt = GroundTruthMorpho::standard();
  const auto data = gt.sample(100000, 3);
  const auto t = data.values.col(data.column("T"));
  const auto i = data.values.col(data.column("I"));
  EXPECT_NEAR(t.mean(), 2.5, 0.05);
  EXPECT_GT(t.minCoeff(), 0.5);
  EXPECT_GT(i.minCoeff(), 64.0);
  EXPECT_LT(i.maxCoeff(), 255.0);
  EXPECT_EQ(data.columns.size(), 6u);
  EXPECT_EQ(data.columns[2], "image[0]");
}

TEST(GroundTruth, IntensityMidpoint) {
  EXPECT_DOUBLE_EQ(GroundTruthMorpho::standard().intensity(2.5, 0.0), 159.5);
}

TEST(GroundTruth, SameSeedSameFile) {
  const auto a = scratch("gen_a.csv");
  const auto b = scratch("gen_b.csv");
  const auto c = scratch("gen_c.csv");
  generate_morpho_dataset(500, 7, a);
  generate_morpho_dataset(500, 7, b);
  generate_morpho_dataset(500, 8, c);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
  EXPECT_THROW(generate_morpho_dataset(0, 7, a), InvalidPlan);
  EXPECT_THROW(generate_morpho_dataset(5, 7, "/nonexistent-dir/x.csv"), IoFailure);
}

// ---------------------------------------------------------------------------
// CSV

TEST(Csv, RoundTripIsExact) {
  const auto data = GroundTruthMorpho::standard().sample(50, 2);
  const auto path = scratch("round.csv");
  write_csv(data, path);
  const auto back = read_csv(path);
  EXPECT_EQ(back.columns, data.columns);
  EXPECT_EQ(back.values, data.values);
}

TEST(Csv, Errors) {
  EXPECT_THROW(read_csv(scratch("missing.csv")), IoFailure);
  const auto header_only = scratch("header.csv");
  std::ofstream(header_only) << "T,I\n";
  EXPECT_THROW(read_csv(header_only), EmptyDataset);
  const auto bad = scratch("bad.csv");
  std::ofstream(bad) << "T,I\n1.0,abc\n";
  EXPECT_THROW(read_csv(bad), FormatError);
  const auto ragged = scratch("ragged.csv");
  std::ofstream(ragged) << "T,I\n1.0\n";
  EXPECT_THROW(read_csv(ragged), FormatError);
}

TEST(Csv, ScalarColumnsAcceptIndexedNames) {
  const auto path = scratch("indexed.csv");
  std::ofstream(path) << "T[0],I[0]\n2.0,150\n";
  const auto data = read_csv(path);
  const NodeSpec t{NodeId{0}, "T", 1, {}};
  EXPECT_EQ(data.node_values(t)(0, 0), 2.0);
}

// ---------------------------------------------------------------------------
// Training

TEST(TrainScm, HeldOutNllCloseToGroundTruth) {
  const auto& f = morpho();
  const auto val = f.data.take(f.correct.validation_rows);
  double truth[3] = {0.0, 0.0, 0.0};
  for (Eigen::Index r = 0; r < val.rows(); ++r) {
    const double t = val.values(r, 0);
    const double i = val.values(r, 1);
    truth[0] += f.truth.nll_thickness(t);
    truth[1] += f.truth.nll_intensity(t, i);
    truth[2] += f.truth.nll_image(t, i, val.values.row(r).tail(4).transpose());
  }
  ASSERT_EQ(f.correct.report.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    const double gt_model_units = truth[k] / static_cast<double>(val.rows()) -
                                  f.correct.model.scaling.log_scale_sum(NodeId{k});
    EXPECT_NEAR(f.correct.report[static_cast<std::size_t>(k)].validation_nll, gt_model_units, 0.1)
        << f.correct.report[static_cast<std::size_t>(k)].node;
  }
}

TEST(TrainScm, HeldOutLatentsAreUncorrelated) {
  const auto& f = morpho();
  const auto& model = f.correct.model;
  std::vector<double> ut, ui;
  for (const auto row : f.correct.validation_rows) {
    const auto u = model.scm.abduct(model.scaling.to_model(factual_from_row(model.scm, f.data, row)));
    ut.push_back(u.block(kT)[0]);
    ui.push_back(u.block(kI)[0]);
  }
  EXPECT_LT(std::abs(correlation(ut, ui)), 0.05);
}

TEST(TrainScm, ReversedGraphTrains) {
  const auto& f = morpho();
  const auto& g = f.reversed.model.scm.graph();
  EXPECT_TRUE(g.node(kI).parents.empty());
  EXPECT_EQ(g.node(kT).parents, std::vector<NodeId>{kI});
  EXPECT_TRUE(validate_scm(f.reversed.model.scm).passed());
}

TEST(TrainScm, RetrainingIsDeterministic) {
  const auto& f = morpho();
  const auto again = train_scm(f.data, load_json(graph_path()), TrainOptions{});
  EXPECT_EQ(model_to_json(again.model), model_to_json(f.correct.model));
}

TEST(TrainScm, SaveLoadRoundTrip) {
  const auto& f = morpho();
  const auto path = scratch("model.json");
  save_model(f.correct.model, path);
  const auto back = load_model(path);
  EXPECT_EQ(model_to_json(back), model_to_json(f.correct.model));
  EXPECT_THROW(load_model(scratch("no_such_model.json")), ModelNotFound);
}

// ---------------------------------------------------------------------------
// Parsing

TEST(Parsing, AntecedentsWeightsAndGrids) {
  const auto& scm = morpho().correct.model.scm;
  const auto a = parse_antecedent(scm, "I=150,T=2");
  EXPECT_EQ(a.nodes, (std::vector<NodeId>{kI, kT}));
  EXPECT_EQ(a.values, Eigen::Vector2d(150.0, 2.0));
  const auto img = parse_antecedent(scm, "image=1:2:3:4");
  EXPECT_EQ(img.values.size(), 4);
  EXPECT_THROW(parse_antecedent(scm, "image=1:2"), DimensionMismatch);
  EXPECT_THROW(parse_antecedent(scm, "Q=1"), DimensionMismatch);
  EXPECT_THROW(parse_antecedent(scm, "I150"), FormatError);
  EXPECT_THROW(parse_antecedent(scm, "I=abc"), FormatError);

  const auto w = parse_weights(scm, "T=10,I=0.5");
  EXPECT_EQ(w.at(kT), 10.0);
  EXPECT_THROW(parse_weights(scm, "T=-1"), InvalidPlan);

  const auto g = parse_grid("1.5:3.5:5");
  EXPECT_EQ(g.values(), (std::vector<double>{1.5, 2.0, 2.5, 3.0, 3.5}));
  EXPECT_THROW(parse_grid("1:2:0"), InvalidPlan);
  EXPECT_THROW(parse_grid("1:2"), InvalidPlan);
  EXPECT_THROW((Grid{1.0, 2.0, 0}.values()), InvalidPlan);
}

TEST(Parsing, FactualJson) {
  const auto& scm = morpho().correct.model.scm;
  const auto x = factual_from_json(scm, nlohmann::json::parse(R"({"T": 2.0, "I": [150], "image": [0, 1, 2, 3]})"));
  EXPECT_EQ(x.block(kI)[0], 150.0);
  EXPECT_THROW(factual_from_json(scm, nlohmann::json::parse(R"({"T": 2.0})")), FormatError);
}

TEST(Parsing, SolverConfigJson) {
  const auto& scm = morpho().correct.model.scm;
  QueryOptions o;
  apply_config_json(scm, nlohmann::json::parse(R"({"lambda": 1e5, "iterations": 7, "weights": {"T": 3},
      "distances": {"I": "huber"}, "samples": 9, "sparsity_m": 2, "seed": 4})"),
                    o);
  EXPECT_EQ(o.config.lambda, 1e5);
  EXPECT_EQ(o.config.iterations, 7);
  EXPECT_EQ(o.config.weight(kT), 3.0);
  EXPECT_EQ(o.config.weight(kI), 1.0);
  EXPECT_EQ(o.config.distance(kI).name, "huber");
  EXPECT_EQ(o.config.distance(kT).name, "weighted-squared");
  EXPECT_EQ(o.samples, 9);
  EXPECT_EQ(o.sparsity_m, 2);
  EXPECT_EQ(o.config.seed, 4u);
  // Untouched fields keep their defaults.
  EXPECT_EQ(o.config.step_size, BacktrackingConfig{}.step_size);

  EXPECT_THROW(apply_config_json(scm, nlohmann::json::parse(R"({"lamda": 1})"), o), FormatError);
  EXPECT_THROW(apply_config_json(scm, nlohmann::json::parse(R"({"lambda": "big"})"), o), FormatError);
  EXPECT_THROW(apply_config_json(scm, nlohmann::json::parse(R"({"weights": {"Q": 1}})"), o), InvalidPlan);
  EXPECT_THROW(apply_config_json(scm, nlohmann::json::parse(R"({"distance": "cubic"})"), o), UnknownDistanceKind);
  EXPECT_THROW(apply_config_json(scm, nlohmann::json::parse("[1]"), o), FormatError);
}

// ---------------------------------------------------------------------------
// Queries and sweeps

TEST(Sweep, IntensityResidualsAndConvergence) {
  const auto& f = morpho();
  SweepPlan plan;
  plan.node = "I";
  plan.grid = {80.0, 240.0, 10};
  plan.methods = {"mode"};
  plan.factual = morpho_factual(0);
  for (const auto& r : run_sweep(f.correct.model, plan)) {
    EXPECT_LT(r.residual, 1e-4);
    EXPECT_LE(r.iterations, 10);
  }
}

TEST(Sweep, IntensityAntecedentMovesThicknessOnlyForBacktracking) {
  const auto& f = morpho();
  SweepPlan plan;
  plan.node = "I";
  plan.grid = {100.0, 220.0, 5};
  plan.factual = morpho_factual(0);
  const auto rows = run_sweep(f.correct.model, plan);
  ASSERT_EQ(rows.size(), 10u);
  double t_min = 1e9, t_max = -1e9;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].query, static_cast<int>(k / 2));
    EXPECT_EQ(rows[k].method, k % 2 == 0 ? "mode" : "interventional");
    const double t = rows[k].x_star.block(kT)[0];
    if (rows[k].method == "interventional") {
      EXPECT_EQ(t, rows[k].x.block(kT)[0]);
    } else {
      t_min = std::min(t_min, t);
      t_max = std::max(t_max, t);
    }
  }
  EXPECT_GT(t_max - t_min, 0.1);
}

TEST(Sweep, ThicknessAntecedentMatchesInterventional) {
  const auto& f = morpho();
  SweepPlan plan;
  plan.node = "T";
  plan.grid = {1.5, 3.5, 10};
  plan.options.config.lambda = 1e8;
  plan.factual = morpho_factual(0);
  const auto rows = run_sweep(f.correct.model, plan);
  for (std::size_t k = 0; k < rows.size(); k += 2) {
    EXPECT_LT((rows[k].x_star.values() - rows[k + 1].x_star.values()).lpNorm<Eigen::Infinity>(), 1e-5);
  }
}

TEST(Sweep, EmptyGridAndUnknownNode) {
  const auto& f = morpho();
  SweepPlan plan;
  plan.node = "I";
  plan.grid = {1.0, 2.0, 0};
  EXPECT_THROW(run_sweep(f.correct.model, plan), InvalidPlan);
  plan.grid = {100.0, 200.0, 2};
  plan.node = "Q";
  EXPECT_THROW(run_sweep(f.correct.model, plan), InvalidPlan);
}

TEST(Query, ResultsFileHasHeaderAndOneLinePerRow) {
  const auto& f = morpho();
  const auto rows = run_query(f.correct.model, "mode", morpho_factual(3), data_antecedent(kI, 180.0), QueryOptions{});
  const auto path = scratch("results.csv");
  write_results(rows, f.correct.model.scm, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("method,query,sample,antecedent,x.T,x.I,x.image[0]", 0), 0u);
  EXPECT_NE(header.find(",residual,iterations,energy_final"), std::string::npos);
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 1);
  EXPECT_THROW(run_query(f.correct.model, "teleport", morpho_factual(3), data_antecedent(kI, 180.0), QueryOptions{}),
               InvalidPlan);
}

TEST(Query, WeightOnThicknessApproachesInterventional) {
  const auto& f = morpho();
  const auto x = morpho_factual(0);
  const double t = x.block(kT)[0];
  double previous = std::numeric_limits<double>::infinity();
  for (double w : {0.1, 1.0, 10.0, 100.0}) {
    QueryOptions o;
    o.config.weights[kT] = w;
    const auto r = run_query(f.correct.model, "mode", x, data_antecedent(kI, 200.0), o);
    const double gap = std::abs(r[0].x_star.block(kT)[0] - t);
    EXPECT_LE(gap, previous) << "w_T = " << w;
    previous = gap;
  }
  QueryOptions o;
  o.config.weights[kT] = 1e4;
  const auto r = run_query(f.correct.model, "mode", x, data_antecedent(kI, 200.0), o);
  EXPECT_LT(std::abs(r[0].x_star.block(kT)[0] - t), 1e-2);
}

TEST(Query, CausalDominanceOverRandomAntecedents) {
  const auto& model = morpho().correct.model;
  const auto& scm = model.scm;
  const std::vector<NodeId> attributes{kT, kI};
  // Standard-normal targets, redrawn when they fall outside the attainable intensity range.
  const auto& sigmoid = dynamic_cast<const SigmoidFlow&>(scm.mechanism(kI));
  const double lo = sigmoid.lower()[0] + 0.01 * sigmoid.width()[0];
  const double hi = sigmoid.lower()[0] + 0.99 * sigmoid.width()[0];
  std::mt19937_64 rng(101);
  std::normal_distribution<double> normal;
  for (int k = 0; k < 100; ++k) {
    const auto x = sample_prior(scm, rng);
    double target = normal(rng);
    while (target <= lo || target >= hi) target = normal(rng);
    const Antecedent a{{kI}, Eigen::VectorXd::Constant(1, target)};
    const auto mode = mode_deepbc(scm, x, a, BacktrackingConfig{});
    const auto iv = interventional_cf(scm, x, a);
    EXPECT_LE(causal_distance(scm, x, mode.counterfactual, InnerDistance::kSqu, attributes),
              causal_distance(scm, x, iv.counterfactual, InnerDistance::kSqu, attributes) + 1e-3);
  }
}

// ---------------------------------------------------------------------------
// Experiments

TEST(WrongGraph, CorrectGraphIgnoresDistanceReversedDoesNot) {
  const auto& f = morpho();
  WrongGraphPlan plan;
  plan.grid = {1.5, 3.5, 10};
  plan.config.lambda = 1e8;
  plan.config.iterations = 100;
  plan.factual = morpho_factual(0);
  const auto result = run_wrong_graph(f.correct.model, f.reversed.model, plan);
  EXPECT_EQ(result.rows.size(), 40u);
  EXPECT_LT(result.correct_spread, 1e-4);
  EXPECT_GT(result.reversed_spread, 10.0 * result.correct_spread);
  const auto path = scratch("wrong.csv");
  write_wrong_graph(result, path);
  EXPECT_EQ(slurp(path).rfind("graph,distance,grid_index,target,node_star,response_star,residual\n", 0), 0u);
}

TEST(WrongGraph, NeedsTwoDistances) {
  const auto& f = morpho();
  WrongGraphPlan plan;
  plan.grid = {1.5, 3.5, 3};
  plan.distances = {"huber"};
  EXPECT_THROW(run_wrong_graph(f.correct.model, f.reversed.model, plan), InvalidPlan);
}

TEST(Benchmark, ModeBeatsInterventionalOnCausalAndControlIsZero) {
  const auto& f = morpho();
  BenchmarkPlan plan;
  plan.repetitions = 60;
  plan.seed = 4;
  const auto result = run_benchmark(f.correct.model, plan);
  auto find = [&](const std::string& method, const std::string& metric, const std::string& m) {
    for (const auto& r : result.rows) {
      if (r.method == method && r.metric == metric && r.m == m) return r;
    }
    throw std::runtime_error("missing row");
  };
  EXPECT_LE(find("mode", "causal", "SQU").mean, find("interventional", "causal", "SQU").mean);
  EXPECT_LT(find("control", "obs", "SQU").mean, 1e-8);
  EXPECT_LT(find("control", "causal", "SQU").mean, 1e-8);
  EXPECT_LT(find("control", "causal", "ABS").mean, 1e-8);
  EXPECT_EQ(find("mode", "plausible", "-").n_repetitions + result.failures.at("mode"), 60);
  EXPECT_EQ(result.rows.size(), 4u * 5u);

  const auto path = scratch("bench.csv");
  write_benchmark(result, path);
  EXPECT_EQ(slurp(path).rfind("method,metric,m,mean,std,n_repetitions\n", 0), 0u);
}

TEST(Benchmark, ZeroRepetitionsIsInvalid) {
  BenchmarkPlan plan;
  plan.repetitions = 0;
  EXPECT_THROW(run_benchmark(morpho().correct.model, plan), InvalidPlan);
}

TEST(StochasticDemo, QuartilesAroundTheMode) {
  const auto& f = morpho();
  StochasticPlan plan;
  plan.grid = {120.0, 200.0, 3};
  plan.samples = 400;
  plan.config.iterations = 200;
  plan.factual = morpho_factual(0);
  const auto result = run_stochastic_demo(f.correct.model, plan);
  EXPECT_EQ(result.samples.size(), 1200u);
  ASSERT_EQ(result.summaries.size(), 6u);
  for (const auto& s : result.summaries) {
    EXPECT_LE(s.q1, s.median);
    EXPECT_LE(s.median, s.q3);
    EXPECT_LE(std::abs(s.median - s.mode), 3.0 * s.mad + 1e-9) << s.node << " at " << s.target;
  }
}

TEST(StochasticDemo, SingleSampleStillWritesValidFiles) {
  const auto& f = morpho();
  StochasticPlan plan;
  plan.grid = {150.0, 150.0, 1};
  plan.samples = 1;
  plan.config.iterations = 50;
  plan.factual = morpho_factual(0);
  const auto result = run_stochastic_demo(f.correct.model, plan);
  ASSERT_EQ(result.samples.size(), 1u);
  const auto path = scratch("stoch.csv");
  write_results(result.samples, f.correct.model.scm, path);
  write_stochastic_summary(result.summaries, scratch("stoch_summary.csv"));
  std::ifstream in(scratch("stoch_summary.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "grid_index,target,node,q1,median,q3,mad,mode");
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 2);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25), 2.0);
  EXPECT_THROW(quantile({}, 0.5), EmptyDataset);
}
