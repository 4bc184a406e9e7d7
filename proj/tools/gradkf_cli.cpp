// gradkf: experiment runner for the gradient-covariance Kalman filters.
//
//   gradkf run <config.json> [--output-dir DIR] [--threads N] [--full-scale]
//   gradkf bench --dims 50,100,200 --trials N [-o FILE]
//   gradkf graph-gen --nodes N (--radius R | --edges E) --seed S -o FILE
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradkf/bench.hpp"
#include "gradkf/csv.hpp"
#include "gradkf/errors.hpp"
#include "gradkf/network.hpp"
#include "gradkf/scenario.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("GRADKF_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(raw, &used);
    if (used != std::string(raw).size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw gradkf::ConfigError(std::string("GRADKF_SEED is not a non-negative integer: ") + raw);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-descent covariance Kalman filters: scenario runner and benchmarks"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> output_dir;
  int threads = 1;
  bool full_scale = false;
  auto* run = app.add_subcommand("run", "Run a scenario config and write CSV traces and a summary");
  run->add_option("config", config_path, "Scenario JSON file")->required();
  run->add_option("--output-dir", output_dir, "Override the config's output directory");
  run->add_option("--threads", threads, "Worker threads for independent runs")->check(CLI::PositiveNumber);
  run->add_flag("--full-scale", full_scale, "Apply the config's full_scale overrides (50x50 grid)");

  std::vector<int> dims;
  int trials = 5;
  std::optional<std::string> bench_out;
  auto* bench = app.add_subcommand("bench", "Time one filter step for the standard and gradient filters");
  bench->add_option("--dims", dims, "State dimensions, ascending")->delimiter(',')->required();
  bench->add_option("--trials", trials, "Timing trials per dimension");
  bench->add_option("-o,--output", bench_out, "Write CSV here instead of stdout");

  int nodes = 0;
  std::optional<double> radius;
  std::optional<std::size_t> edges;
  std::uint64_t seed = 1;
  std::string graph_out;
  auto* gen = app.add_subcommand("graph-gen", "Generate a random geometric sensor graph");
  gen->add_option("--nodes", nodes, "Node count")->required()->check(CLI::PositiveNumber);
  auto* radius_opt = gen->add_option("--radius", radius, "Connection radius in the unit square");
  gen->add_option("--edges", edges, "Tune the radius to approach this edge count")->excludes(radius_opt);
  gen->add_option("--seed", seed, "Placement seed");
  gen->add_option("-o,--output", graph_out, "Graph file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      const auto cfg = gradkf::load_scenario(config_path, full_scale);
      gradkf::RunOptions opts;
      opts.output_dir = output_dir;
      opts.threads = threads;
      opts.seed_override = seed_from_env();
      const auto result = gradkf::run_scenario(cfg, opts);
      for (const auto& f : result.files) std::cout << f << "\n";
      if (const auto* sweep = std::get_if<gradkf::SweepResult>(&result.result)) {
        for (std::size_t a = 0; a < sweep->alphas.size(); ++a) {
          std::cerr << "alpha=" << sweep->alphas[a];
          for (std::size_t s = 0; s < sweep->series.size(); ++s)
            std::cerr << " " << sweep->series[s] << "=" << sweep->median(s, a);
          std::cerr << "\n";
        }
      } else {
        const auto& net = std::get<gradkf::NetworkRunResult>(result.result);
        std::cerr << "nodes=" << net.node_count << " edges=" << net.edge_count
                  << " median node MSE=" << gradkf::median_of(net.node_mse)
                  << " median aggregate MSE=" << gradkf::median_of(net.aggregate_mse) << "\n";
      }
    } else if (*bench) {
      const auto res = gradkf::bench_step_cost(dims, trials);
      if (bench_out)
        gradkf::write_file_atomic(*bench_out, res.csv());
      else
        std::cout << res.csv();
    } else if (*gen) {
      if (!radius && !edges) throw gradkf::ConfigError("graph-gen: give --radius or --edges");
      const double r = radius ? *radius : gradkf::tune_radius_for_edges(nodes, *edges, seed);
      const auto g = gradkf::generate_geometric_graph(nodes, r, seed);
      gradkf::save_graph(graph_out, g.graph);
      std::cout << "nodes " << g.graph.node_count() << " edges " << g.graph.edge_count() << " radius "
                << gradkf::format_double(r) << "\n";
    }
  } catch (const gradkf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const gradkf::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
