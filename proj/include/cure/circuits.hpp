#pragma once
// Greedy top-down circuit extraction from edge scores, and the induced
// parameter partition into forget-specific / retain-specific / shared groups.

#include "cure/attribution.hpp"
#include "cure/model.hpp"

#include <set>
#include <string>
#include <vector>

namespace cure {

struct Circuit {
  std::vector<std::pair<std::string, double>> edges;  // extraction order
  std::set<std::string> nodes;
  int budget = 0;
  std::string method;

  bool contains_node(const std::string& key) const { return nodes.count(key) > 0; }
  // Every node except logits must keep an outgoing edge inside the circuit.
  void validate_connectivity() const;

  json to_json() const;
  static Circuit from_json(const json& j);
};

// ceil(fraction * |edges|)
int budget_from_fraction(const EdgeScoreMap& scores, double fraction);

// Starting from the logits node, repeatedly add the highest-scoring edge whose
// downstream endpoint is already inside the circuit. Ties break by edge key.
Circuit greedy_extract(const ComputationGraph& graph, const EdgeScoreMap& scores, int budget,
                       std::string* warning = nullptr);

struct ParameterPartition {
  std::vector<std::string> forget_keys, retain_keys, shared_keys, untouched_keys;
  std::vector<std::string> forget_nodes, retain_nodes, shared_nodes;

  std::vector<std::string> circuit_keys() const;  // union of the three groups
  json to_json() const;
};

// Head/MLP nodes only; embeddings and the unembedding always stay untouched.
ParameterPartition partition_parameters(const Circuit& forget_circuit,
                                        const Circuit& retain_circuit, const ModelState& state);

}  // namespace cure
