// Command-line front end: data generation, training, single queries and the
// experiment runners. All numeric outputs are CSV; models are JSON.

#include "backtrack/errors.hpp"
#include "backtrack/harness.hpp"
#include "backtrack/morpho.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>

namespace bt = backtrack;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Inline JSON object if the text starts with '{', otherwise a file path.
nlohmann::json json_argument(const std::string& text, const char* flag) {
  const auto first = text.find_first_not_of(" \t");
  if (first == std::string::npos || text[first] != '{') return bt::load_json(text);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw bt::FormatError(std::string(flag) + ": " + e.what());
  }
}

struct SolverFlags {
  std::optional<double> lambda;
  std::optional<int> iters;
  std::optional<double> eta;
  std::optional<double> damping;
  std::string config;
  std::string weights;
  std::optional<std::string> distance;
  std::optional<int> sparsity_m;
  std::optional<int> samples;
  std::optional<std::uint64_t> seed;
  int default_samples = 100;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "Solver config JSON (inline or file path); flags override it");
    cmd->add_option("--lambda", lambda, "Penalty parameter");
    cmd->add_option("--iters", iters, "Solver iterations / Langevin steps");
    cmd->add_option("--eta", eta, "Langevin step size");
    cmd->add_option("--damping", damping, "Damping added to the linearized system");
    cmd->add_option("--weights", weights, "Per-node distance weights NODE=W[,NODE=W]");
    cmd->add_option("--distance", distance, "Distance kind: weighted-squared, huber, absolute-smooth");
    cmd->add_option("--sparsity-m", sparsity_m, "Latent blocks kept by the sparse solver");
    cmd->add_option("--samples", samples, "Langevin chains for stochastic queries");
    cmd->add_option("--seed", seed, "Random seed");
  }

  bt::QueryOptions options(const bt::Scm& scm, bool stochastic) const {
    bt::QueryOptions o;
    o.config = stochastic ? bt::BacktrackingConfig::stochastic_defaults() : bt::BacktrackingConfig::mode_defaults();
    o.samples = default_samples;
    if (!config.empty()) bt::apply_config_json(scm, json_argument(config, "--config"), o);
    if (lambda) o.config.lambda = *lambda;
    if (iters) o.config.iterations = *iters;
    if (eta) o.config.step_size = *eta;
    if (damping) o.config.damping = *damping;
    for (const auto& [id, w] : bt::parse_weights(scm, weights)) o.config.weights[id] = w;
    if (distance) o.config.default_distance = bt::DistanceRegistry().get(*distance);
    if (sparsity_m) o.sparsity_m = *sparsity_m;
    if (samples) o.samples = *samples;
    if (seed) o.config.seed = *seed;
    return o;
  }
};

struct FactualFlags {
  std::optional<long> row;
  std::string data;
  std::string json;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--factual-row", row, "Row of --data used as the factual");
    cmd->add_option("--data", data, "Dataset CSV for --factual-row");
    cmd->add_option("--factual-json", json, "Factual as a JSON object (inline or file path)");
  }

  std::optional<bt::StructuredVector> get(const bt::Scm& scm) const {
    if (row && !json.empty()) throw bt::InvalidPlan("give either --factual-row or --factual-json");
    if (row) {
      if (data.empty()) throw bt::InvalidPlan("--factual-row needs --data");
      return bt::factual_from_row(scm, bt::read_csv(data), *row);
    }
    if (!json.empty()) return bt::factual_from_json(scm, json_argument(json, "--factual-json"));
    return std::nullopt;
  }
};

void print_training_report(const std::vector<bt::NodeTrainingReport>& report) {
  std::cout << "node,train_nll,validation_nll,iterations\n";
  for (const auto& r : report) {
    std::cout << r.node << ',' << bt::format_double(r.train_nll) << ',' << bt::format_double(r.validation_nll)
              << ',' << r.iterations << '\n';
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Backtracking counterfactuals in structural causal models"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Sample the synthetic thickness/intensity/image dataset");
  long gen_n = 10000;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--n", gen_n, "Number of rows")->required();
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--out", gen_out, "Output CSV")->required();

  // train
  auto* train = app.add_subcommand("train", "Fit every mechanism of a graph spec by maximum likelihood");
  std::string train_data, train_graph, train_out;
  std::vector<std::string> reverse_edge;
  bt::TrainOptions train_opts;
  train->add_option("--data", train_data, "Dataset CSV")->required();
  train->add_option("--graph", train_graph, "Graph spec JSON")->required();
  train->add_option("--out", train_out, "Trained model JSON")->required();
  train->add_option("--reverse-edge", reverse_edge, "Reverse the edge FROM TO")->expected(2);
  train->add_option("--seed", train_opts.mle.seed, "Shuffle seed");
  train->add_option("--iterations", train_opts.mle.iterations, "SGD iterations per node");
  train->add_option("--learning-rate", train_opts.mle.learning_rate, "SGD learning rate");
  train->add_option("--batch-size", train_opts.mle.batch_size, "Minibatch size");

  // single queries
  struct Query {
    CLI::App* cmd;
    std::string method;
    std::string model, antecedent, out;
    FactualFlags factual;
    SolverFlags solver;
  };
  std::vector<Query> queries;
  for (const auto& [name, method] : std::vector<std::pair<std::string, std::string>>{
           {"mode", "mode"}, {"sample", "stochastic"}, {"sparse", "sparse"}, {"intervene", "interventional"}}) {
    queries.push_back({app.add_subcommand(name, "Single " + method + " counterfactual query"), method, "", "", "", {}, {}});
  }
  for (auto& q : queries) {
    q.cmd->add_option("--model", q.model, "Trained model JSON")->required();
    q.cmd->add_option("--antecedent", q.antecedent, "NODE=VALUE[,NODE=VALUE], data units")->required();
    q.cmd->add_option("--out", q.out, "Output CSV")->required();
    q.factual.add_to(q.cmd);
    q.solver.add_to(q.cmd);
  }

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Antecedent sweep over a value grid");
  std::string sweep_model, sweep_node, sweep_grid, sweep_methods = "mode,interventional", sweep_out;
  FactualFlags sweep_factual;
  SolverFlags sweep_solver;
  sweep->add_option("--model", sweep_model, "Trained model JSON")->required();
  sweep->add_option("--node", sweep_node, "Antecedent node")->required();
  sweep->add_option("--grid", sweep_grid, "LO:HI:STEPS, data units")->required();
  sweep->add_option("--methods", sweep_methods, "Comma-separated: mode, first-order, sparse, interventional");
  sweep->add_option("--out", sweep_out, "Output CSV")->required();
  sweep_factual.add_to(sweep);
  sweep_solver.add_to(sweep);

  // wrong-graph
  auto* wrong = app.add_subcommand("wrong-graph", "Correct versus reversed graph under several distances");
  std::string wrong_model, wrong_reversed, wrong_distances = "weighted-squared,huber", wrong_grid = "1.5:3.5:10",
                                                             wrong_out, wrong_node = "T", wrong_response = "I";
  double wrong_lambda = 1e8;
  int wrong_iters = 100;
  std::uint64_t wrong_seed = 0;
  FactualFlags wrong_factual;
  wrong->add_option("--model", wrong_model, "Correct-graph model JSON")->required();
  wrong->add_option("--model-reversed", wrong_reversed, "Reversed-graph model JSON")->required();
  wrong->add_option("--distances", wrong_distances, "Comma-separated distance kinds");
  wrong->add_option("--grid", wrong_grid, "LO:HI:STEPS for the antecedent node, data units");
  wrong->add_option("--node", wrong_node, "Antecedent node");
  wrong->add_option("--response", wrong_response, "Reported response node");
  wrong->add_option("--lambda", wrong_lambda, "Penalty parameter");
  wrong->add_option("--iters", wrong_iters, "Solver iterations");
  wrong->add_option("--seed", wrong_seed, "Seed of the factual draw");
  wrong->add_option("--out", wrong_out, "Output CSV")->required();
  wrong_factual.add_to(wrong);

  // bench
  auto* bench = app.add_subcommand("bench", "Repeated random queries scored by the three metrics");
  std::string bench_model, bench_methods = "mode,sparse,interventional", bench_out, bench_attributes = "T,I";
  int bench_reps = 500;
  SolverFlags bench_solver;
  bench->add_option("--model", bench_model, "Trained model JSON")->required();
  bench->add_option("--reps", bench_reps, "Repetitions");
  bench->add_option("--methods", bench_methods, "Comma-separated: mode, sparse, interventional");
  bench->add_option("--attributes", bench_attributes, "Comma-separated attribute nodes");
  bench->add_option("--out", bench_out, "Output CSV")->required();
  bench_solver.add_to(bench);

  // stochastic-demo
  auto* demo = app.add_subcommand("stochastic-demo", "Langevin samples and quartiles over an antecedent grid");
  std::string demo_model, demo_node = "I", demo_grid, demo_out, demo_summary;
  FactualFlags demo_factual;
  SolverFlags demo_solver;
  demo_solver.default_samples = 400;
  demo->add_option("--model", demo_model, "Trained model JSON")->required();
  demo->add_option("--node", demo_node, "Antecedent node");
  demo->add_option("--grid", demo_grid, "LO:HI:STEPS, data units")->required();
  demo->add_option("--out", demo_out, "Per-sample CSV")->required();
  demo->add_option("--summary-out", demo_summary, "Quartile CSV (default: <out>_summary.csv)");
  demo_factual.add_to(demo);
  demo_solver.add_to(demo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  if (gen->parsed()) {
    bt::generate_morpho_dataset(gen_n, gen_seed, gen_out);
    return 0;
  }
  if (train->parsed()) {
    if (!reverse_edge.empty()) train_opts.reverse_edge = std::make_pair(reverse_edge[0], reverse_edge[1]);
    const auto outcome = bt::train_scm(bt::read_csv(train_data), bt::load_json(train_graph), train_opts);
    bt::save_model(outcome.model, train_out);
    print_training_report(outcome.report);
    return 0;
  }
  for (auto& q : queries) {
    if (!q.cmd->parsed()) continue;
    const auto model = bt::load_model(q.model);
    const auto x = q.factual.get(model.scm);
    if (!x) throw bt::InvalidPlan("a factual is required (--factual-row with --data, or --factual-json)");
    const auto a = bt::parse_antecedent(model.scm, q.antecedent);
    const auto rows =
        bt::run_query(model, q.method, *x, a, q.solver.options(model.scm, q.method == "stochastic"));
    bt::write_results(rows, model.scm, q.out);
    return 0;
  }
  if (sweep->parsed()) {
    const auto model = bt::load_model(sweep_model);
    bt::SweepPlan plan;
    plan.node = sweep_node;
    plan.grid = bt::parse_grid(sweep_grid);
    plan.methods = split_list(sweep_methods);
    plan.options = sweep_solver.options(model.scm, false);
    plan.factual = sweep_factual.get(model.scm);
    plan.seed = plan.options.config.seed;
    bt::write_results(bt::run_sweep(model, plan), model.scm, sweep_out);
    return 0;
  }
  if (wrong->parsed()) {
    const auto correct = bt::load_model(wrong_model);
    const auto reversed = bt::load_model(wrong_reversed);
    bt::WrongGraphPlan plan;
    plan.grid = bt::parse_grid(wrong_grid);
    plan.node = wrong_node;
    plan.response = wrong_response;
    plan.distances = split_list(wrong_distances);
    plan.config.lambda = wrong_lambda;
    plan.config.iterations = wrong_iters;
    plan.factual = wrong_factual.get(correct.scm);
    plan.seed = wrong_seed;
    const auto result = bt::run_wrong_graph(correct, reversed, plan);
    bt::write_wrong_graph(result, wrong_out);
    std::cout << "correct_spread," << bt::format_double(result.correct_spread) << '\n'
              << "reversed_spread," << bt::format_double(result.reversed_spread) << '\n';
    return 0;
  }
  if (bench->parsed()) {
    const auto model = bt::load_model(bench_model);
    bt::BenchmarkPlan plan;
    plan.repetitions = bench_reps;
    plan.methods = split_list(bench_methods);
    plan.attributes = split_list(bench_attributes);
    plan.options = bench_solver.options(model.scm, false);
    plan.seed = plan.options.config.seed;
    const auto result = bt::run_benchmark(model, plan);
    bt::write_benchmark(result, bench_out);
    for (const auto& [method, count] : result.failures) {
      if (count > 0) {
        std::cerr << method << ": " << count << " failed repetition(s), first: " << result.first_failure.at(method)
                  << '\n';
      }
    }
    return 0;
  }
  if (demo->parsed()) {
    const auto model = bt::load_model(demo_model);
    bt::StochasticPlan plan;
    plan.node = demo_node;
    plan.grid = bt::parse_grid(demo_grid);
    const auto options = demo_solver.options(model.scm, true);
    plan.samples = options.samples;
    plan.config = options.config;
    plan.factual = demo_factual.get(model.scm);
    plan.seed = options.config.seed;
    const auto result = bt::run_stochastic_demo(model, plan);
    bt::write_results(result.samples, model.scm, demo_out);
    if (demo_summary.empty()) {
      std::filesystem::path p(demo_out);
      demo_summary = (p.parent_path() / (p.stem().string() + "_summary.csv")).string();
    }
    bt::write_stochastic_summary(result.summaries, demo_summary);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
