#pragma once

#include "backtrack/dataset.hpp"
#include "backtrack/metrics.hpp"
#include "backtrack/scm.hpp"
#include "backtrack/solvers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace backtrack {

// ---------------------------------------------------------------------------
// Per-node standardization between data units and model units.

struct NodeScaling {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
};

class Scaling {
 public:
  Scaling() = default;
  /// Identity scaling for every node of the graph.
  static Scaling identity(const CausalGraph& graph);

  void set(NodeId id, NodeScaling s) { nodes_.insert_or_assign(id, std::move(s)); }
  const NodeScaling& get(NodeId id) const;

  Eigen::VectorXd to_model(NodeId id, const Eigen::Ref<const Eigen::VectorXd>& data) const;
  Eigen::VectorXd to_data(NodeId id, const Eigen::Ref<const Eigen::VectorXd>& model) const;
  StructuredVector to_model(const StructuredVector& data) const;
  StructuredVector to_data(const StructuredVector& model) const;
  /// Antecedent values are converted block by block.
  Antecedent to_model(const Antecedent& data) const;
  /// Sum of log scales of a node: NLL(data units) = NLL(model units) + this.
  double log_scale_sum(NodeId id) const;

  nlohmann::json to_json(const CausalGraph& graph) const;
  static Scaling from_json(const nlohmann::json& j, const CausalGraph& graph);

 private:
  std::map<NodeId, NodeScaling> nodes_;
};

/// An SCM in model units together with the scaling of its training data.
struct TrainedModel {
  Scm scm;
  Scaling scaling;

  /// Reduced form and conversion back to data units.
  StructuredVector data_from_latent(const StructuredVector& u) const {
    return scaling.to_data(scm.reduced_form(u));
  }
};

nlohmann::json model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
/// Throws ModelNotFound if the file does not exist.
TrainedModel load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training.

struct TrainOptions {
  TrainingOptions mle;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  /// Replace the edge FROM -> TO by TO -> FROM before training.
  std::optional<std::pair<std::string, std::string>> reverse_edge;
};

struct NodeTrainingReport {
  std::string node;
  double train_nll = 0.0;       // model units
  double validation_nll = 0.0;  // model units
  int iterations = 0;
};

struct TrainOutcome {
  TrainedModel model;
  std::vector<NodeTrainingReport> report;
  std::vector<Eigen::Index> train_rows;
  std::vector<Eigen::Index> validation_rows;
};

/// Seeded shuffle of [0, n), split into the first round(fraction * n) rows and the rest.
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(Eigen::Index n, double fraction,
                                                                           std::uint64_t seed);

/// Standardizes every non-categorical node over the training rows and fits
/// each mechanism against its parents only. Sigmoid ranges given in data
/// units are converted; a missing range becomes the training min/max widened
/// by 5% of the span on each side.
TrainOutcome train_scm(const Dataset& data, const nlohmann::json& graph_spec, const TrainOptions& options);

/// Observed vector (data units) from a dataset row.
StructuredVector factual_from_row(const Scm& scm, const Dataset& data, Eigen::Index row);
/// Observed vector (data units) from {"node": value or [values]}.
StructuredVector factual_from_json(const Scm& scm, const nlohmann::json& j);
/// "NODE=v[,NODE=v]" with vector values written v1:v2:...; data units.
Antecedent parse_antecedent(const Scm& scm, const std::string& text);
/// "NODE=w[,NODE=w]".
std::map<NodeId, double> parse_weights(const Scm& scm, const std::string& text);

/// Draw from the model prior: u ~ N(0, I), x = F(u), model units.
StructuredVector sample_prior(const Scm& scm, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Counterfactual queries and result files.

struct ResultRow {
  std::string method;
  int query = 0;
  int sample = 0;
  Antecedent antecedent;       // data units
  StructuredVector x;          // data units
  StructuredVector x_star;     // data units
  StructuredVector u;          // model units
  StructuredVector u_star;     // model units; NaN where abduction fails
  double residual = 0.0;       // model units
  int iterations = 0;
  double energy_final = 0.0;
};

struct QueryOptions {
  BacktrackingConfig config;
  int sparsity_m = 1;
  int samples = 1;
};

/// Overrides fields of `options` from a JSON object. Keys: lambda, iterations,
/// step_size, damping, retry_with_damping, energy_tolerance,
/// stop_on_convergence, oscillation_window, learning_rate,
/// first_order_iterations, gradient_tolerance, default_weight, weights
/// {node: w}, distance, distances {node: kind}, seed, sparsity_m, samples.
/// Unknown keys throw FormatError.
void apply_config_json(const Scm& scm, const nlohmann::json& j, QueryOptions& options);

/// Runs one method ("mode", "first-order", "stochastic", "sparse",
/// "interventional") on a data-unit factual and antecedent. Stochastic
/// queries return one row per sample.
std::vector<ResultRow> run_query(const TrainedModel& model, const std::string& method,
                                 const StructuredVector& x_data, const Antecedent& antecedent_data,
                                 const QueryOptions& options, int query_index = 0);

void write_results(const std::vector<ResultRow>& rows, const Scm& scm, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Experiments.

struct Grid {
  double lo = 0.0;
  double hi = 0.0;
  int steps = 0;
  std::vector<double> values() const;
};
/// "LO:HI:STEPS". Throws InvalidPlan.
Grid parse_grid(const std::string& text);

struct SweepPlan {
  std::string node;
  Grid grid;
  std::vector<std::string> methods{"mode", "interventional"};
  QueryOptions options;
  /// Factual in data units; a seeded prior draw when absent.
  std::optional<StructuredVector> factual;
  std::uint64_t seed = 0;
};

/// One row per (grid value, method), grid-major.
std::vector<ResultRow> run_sweep(const TrainedModel& model, const SweepPlan& plan);

struct WrongGraphPlan {
  Grid grid;  // thickness values, data units
  std::string node = "T";
  std::string response = "I";
  std::vector<std::string> distances{"weighted-squared", "huber"};
  BacktrackingConfig config;
  std::optional<StructuredVector> factual;
  std::uint64_t seed = 0;
};

struct WrongGraphRow {
  std::string graph;  // "correct" or "reversed"
  std::string distance;
  int grid_index = 0;
  double target = 0.0;
  double node_star = 0.0;
  double response_star = 0.0;
  double residual = 0.0;
};

struct WrongGraphResult {
  std::vector<WrongGraphRow> rows;
  /// Max over the grid of the range of response* across distance kinds (data units).
  double correct_spread = 0.0;
  double reversed_spread = 0.0;
};

WrongGraphResult run_wrong_graph(const TrainedModel& correct, const TrainedModel& reversed,
                                 const WrongGraphPlan& plan);
void write_wrong_graph(const WrongGraphResult& result, const std::filesystem::path& path);

struct BenchmarkPlan {
  int repetitions = 500;
  std::vector<std::string> methods{"mode", "sparse", "interventional"};
  std::vector<std::string> attributes{"T", "I"};
  QueryOptions options;
  std::uint64_t seed = 0;
  /// Adds "control" rows: mode DeepBC with the antecedent set to the factual value.
  bool control = true;
};

struct BenchmarkRow {
  std::string method;
  std::string metric;  // plausible, obs, causal
  std::string m;       // SQU, ABS, or "-" for plausible
  double mean = 0.0;
  double std = 0.0;
  int n_repetitions = 0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;
  /// Failed queries per method, with the first failure message.
  std::map<std::string, int> failures;
  std::map<std::string, std::string> first_failure;
  /// Per-repetition causal SQU for each method (NaN where the query failed).
  std::map<std::string, std::vector<double>> causal_squ;
};

BenchmarkResult run_benchmark(const TrainedModel& model, const BenchmarkPlan& plan);
void write_benchmark(const BenchmarkResult& result, const std::filesystem::path& path);

struct StochasticPlan {
  std::string node = "I";
  Grid grid;
  int samples = 400;
  BacktrackingConfig config = BacktrackingConfig::stochastic_defaults();
  std::optional<StructuredVector> factual;
  std::uint64_t seed = 0;
};

struct StochasticSummary {
  int grid_index = 0;
  double target = 0.0;
  std::string node;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double mad = 0.0;
  double mode = 0.0;
};

struct StochasticResult {
  std::vector<ResultRow> samples;
  std::vector<StochasticSummary> summaries;
};

/// Per grid value: `samples` Langevin endpoints and quartiles of every
/// scalar node (data units).
StochasticResult run_stochastic_demo(const TrainedModel& model, const StochasticPlan& plan);
void write_stochastic_summary(const std::vector<StochasticSummary>& rows, const std::filesystem::path& path);

/// Linear-interpolation quantile of unsorted values.
double quantile(std::vector<double> values, double q);

}  // namespace backtrack
