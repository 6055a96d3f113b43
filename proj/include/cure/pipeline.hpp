#pragma once
// End-to-end orchestration shared by the CLI and the acceptance suite:
// dataset materialization, training, circuit discovery, unlearning, and
// evaluation, with content-hash caching for idempotent reruns.

#include "cure/circuits.hpp"
#include "cure/eval.hpp"
#include "cure/ppr.hpp"
#include "cure/runconfig.hpp"

#include <string>
#include <vector>

namespace cure {

struct Workspace {
  InteractionGraph graph;
  PromptTemplate tmpl;
  Tokenizer tok;
  DatasetSplit split;
  int longest_prompt = 0;
};

Workspace build_workspace(const RunConfig& cfg);
void save_workspace(const Workspace& ws, const RunConfig& cfg, const std::string& dir);
Workspace load_workspace(const RunConfig& cfg, const std::string& dir);

struct TrainOutput {
  std::string checkpoint_path;
  double wall_seconds = 0;
  bool cached = false;
};

TrainOutput run_train(const RunConfig& cfg);

struct CircuitsOutput {
  std::string circuit_path;
  Circuit circuit;
  int samples_used = 0;
  int corrupt_failures = 0;
  bool cached = false;
};

// set_name is "forget" or "retain"; retain scores aggregate over the
// PPR-selected retain buffer.
CircuitsOutput run_circuits(const RunConfig& cfg, const std::string& set_name);

struct UnlearnOutput {
  std::string checkpoint_path;
  std::string trace_path;
  double wall_seconds = 0;       // unlearning loop only
  double total_wall_seconds = 0; // including circuit discovery (cure)
  bool cached = false;
};

UnlearnOutput run_unlearn(const RunConfig& cfg);

struct EvalOutput {
  MetricsReport report;
  std::string metrics_path;
};

EvalOutput run_eval(const RunConfig& cfg);

void run_report(const RunConfig& cfg);

}  // namespace cure
