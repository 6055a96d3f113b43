// cure: train a tiny prompt-based recommender, locate forget/retain circuits,
// run selective unlearning, and evaluate against a retrain oracle.

#include "cure/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitAttribution = 4;
constexpr int kExitReportInput = 5;

struct GlobalOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string seed;
  std::string threads;
};

cure::RunConfig resolve_config(const GlobalOpts& g) {
  cure::RunConfig cfg =
      g.config_path.empty() ? cure::RunConfig() : cure::RunConfig::from_file(g.config_path);
  for (const auto& kv : g.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw cure::ConfigError("--set expects key=value, got: " + kv);
    cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!g.out.empty()) cfg.apply_override("out", g.out);
  if (!g.seed.empty()) cfg.apply_override("seed", g.seed);
  if (!g.threads.empty()) cfg.apply_override("threads", g.threads);
  cfg.validate();
  return cfg;
}

void add_globals(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config_path, "run configuration file");
  cmd->add_option("--set", g.overrides, "override a config key (key=value)");
  cmd->add_option("--out", g.out, "output directory");
  cmd->add_option("--seed", g.seed, "seed override");
  cmd->add_option("--threads", g.threads, "worker cap (1 = fully deterministic)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"circuit-aware unlearning for a prompt-based recommender"};
  app.require_subcommand(1);

  GlobalOpts g;
  std::string circuit_set = "forget";
  bool synth = false;

  auto* train = app.add_subcommand("train", "train the original model and write artifacts");
  add_globals(train, g);
  train->add_flag("--synth", synth, "use the synthetic dataset (default source)");

  auto* circuits = app.add_subcommand("circuits", "score edges and extract a circuit");
  add_globals(circuits, g);
  circuits->add_option("circuit_set", circuit_set, "forget | retain")
      ->check(CLI::IsMember({"forget", "retain"}));

  auto* unlearn = app.add_subcommand("unlearn", "run the configured unlearning method");
  add_globals(unlearn, g);

  auto* eval = app.add_subcommand("eval", "evaluate against the retrain oracle");
  add_globals(eval, g);

  auto* report = app.add_subcommand("report", "emit SVG charts and a summary table");
  add_globals(report, g);

  CLI11_PARSE(app, argc, argv);

  try {
    cure::RunConfig cfg = resolve_config(g);
    if (synth) cfg.apply_override("data.source", "synth");

    if (train->parsed()) {
      auto out = cure::run_train(cfg);
      std::cout << (out.cached ? "cached checkpoint " : "wrote checkpoint ")
                << out.checkpoint_path << "\n";
    } else if (circuits->parsed()) {
      auto out = cure::run_circuits(cfg, circuit_set);
      std::cout << (out.cached ? "cached circuit " : "wrote circuit ") << out.circuit_path
                << " (" << out.circuit.edges.size() << " edges";
      if (out.corrupt_failures > 0) std::cout << ", " << out.corrupt_failures << " corrupt failures";
      std::cout << ")\n";
    } else if (unlearn->parsed()) {
      auto out = cure::run_unlearn(cfg);
      std::cout << (out.cached ? "cached " : "wrote ") << out.checkpoint_path << " and "
                << out.trace_path << "\n";
    } else if (eval->parsed()) {
      auto out = cure::run_eval(cfg);
      std::cout << out.report.to_json().dump(1) << "\n";
    } else if (report->parsed()) {
      cure::run_report(cfg);
      std::cout << "wrote " << cfg.out_dir() << "/report\n";
    }
  } catch (const cure::TrainingDivergence& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const cure::AttributionError& e) {
    std::cerr << "attribution: " << e.what() << "\n";
    return kExitAttribution;
  } catch (const cure::MissingInput& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kExitReportInput;
  } catch (const cure::ConfigError& e) {
    std::cerr << "config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cure::ParseError& e) {
    std::cerr << "parse: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
