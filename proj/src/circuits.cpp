#include "cure/circuits.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cure {

namespace {

std::pair<std::string, std::string> split_edge_key(const std::string& ekey) {
  auto arrow = ekey.find("→");
  if (arrow == std::string::npos) throw ParseError("malformed edge key: " + ekey);
  return {ekey.substr(0, arrow), ekey.substr(arrow + std::strlen("→"))};
}

}  // namespace

void Circuit::validate_connectivity() const {
  if (!contains_node("logits")) throw ParseError("circuit does not reach the logits node");
  std::set<std::string> with_outgoing;
  for (const auto& [ekey, score] : edges) {
    auto [from, to] = split_edge_key(ekey);
    if (!nodes.count(from) || !nodes.count(to))
      throw ParseError("circuit edge references a node outside the circuit: " + ekey);
    with_outgoing.insert(from);
  }
  for (const auto& n : nodes) {
    if (n == "logits") continue;
    if (!with_outgoing.count(n))
      throw ParseError("childless node inside circuit: " + n);
  }
}

json Circuit::to_json() const {
  json j;
  j["method"] = method;
  j["budget"] = budget;
  json je = json::array();
  for (const auto& [ekey, score] : edges) {
    auto [from, to] = split_edge_key(ekey);
    je.push_back({{"from", from}, {"to", to}, {"score", score}});
  }
  j["edges"] = je;
  j["nodes"] = std::vector<std::string>(nodes.begin(), nodes.end());
  return j;
}

Circuit Circuit::from_json(const json& j) {
  Circuit c;
  c.method = j.at("method").get<std::string>();
  c.budget = j.at("budget").get<int>();
  for (const auto& je : j.at("edges")) {
    c.edges.emplace_back(edge_key(je.at("from").get<std::string>(), je.at("to").get<std::string>()),
                         je.at("score").get<double>());
  }
  for (const auto& n : j.at("nodes")) c.nodes.insert(n.get<std::string>());
  c.validate_connectivity();
  return c;
}

int budget_from_fraction(const EdgeScoreMap& scores, double fraction) {
  if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("circuit fraction must lie in (0,1]");
  return static_cast<int>(std::ceil(fraction * static_cast<double>(scores.score.size())));
}

Circuit greedy_extract(const ComputationGraph& graph, const EdgeScoreMap& scores, int budget,
                       std::string* warning) {
  if (budget < 1) throw ConfigError("circuit budget must be >= 1");
  for (const auto& e : graph.edges)
    if (!scores.score.count(e.key()))
      throw ConfigError("score map does not cover edge " + e.key());

  // Candidates sorted once by (score desc, key asc); each round takes the first
  // unused edge whose downstream endpoint is already in the circuit.
  std::vector<std::pair<std::string, double>> order;
  order.reserve(graph.edges.size());
  for (const auto& [key, s] : scores.score) {
    if (!std::isfinite(s)) throw ParseError("non-finite edge score: " + key);
    order.emplace_back(key, s);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Circuit c;
  c.method = to_string(scores.method);
  c.budget = budget;
  c.nodes.insert("logits");
  std::vector<char> used(order.size(), 0);
  for (int picked = 0; picked < budget; ++picked) {
    bool found = false;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (used[i]) continue;
      auto [from, to] = split_edge_key(order[i].first);
      if (!c.nodes.count(to)) continue;
      used[i] = 1;
      c.edges.emplace_back(order[i].first, order[i].second);
      c.nodes.insert(from);
      found = true;
      break;
    }
    if (!found) {
      if (warning)
        *warning = "budget " + std::to_string(budget) + " exceeds admissible edges; extracted " +
                   std::to_string(c.edges.size());
      break;
    }
  }
  return c;
}

std::vector<std::string> ParameterPartition::circuit_keys() const {
  std::vector<std::string> keys = forget_keys;
  keys.insert(keys.end(), retain_keys.begin(), retain_keys.end());
  keys.insert(keys.end(), shared_keys.begin(), shared_keys.end());
  std::sort(keys.begin(), keys.end());
  return keys;
}

json ParameterPartition::to_json() const {
  json j;
  j["forget_nodes"] = forget_nodes;
  j["retain_nodes"] = retain_nodes;
  j["shared_nodes"] = shared_nodes;
  j["forget_keys"] = forget_keys;
  j["retain_keys"] = retain_keys;
  j["shared_keys"] = shared_keys;
  j["untouched_keys"] = untouched_keys;
  return j;
}

ParameterPartition partition_parameters(const Circuit& forget_circuit,
                                        const Circuit& retain_circuit, const ModelState& state) {
  ParameterPartition p;
  ComputationGraph graph = ComputationGraph::build(state.config);
  std::set<std::string> assigned;
  for (const auto& node : graph.nodes) {
    if (!node.has_parameters()) continue;
    std::string key = node.key();
    bool in_f = forget_circuit.contains_node(key);
    bool in_r = retain_circuit.contains_node(key);
    auto param_keys = node_parameter_keys(node);
    if (in_f && !in_r) {
      p.forget_nodes.push_back(key);
      p.forget_keys.insert(p.forget_keys.end(), param_keys.begin(), param_keys.end());
    } else if (in_r && !in_f) {
      p.retain_nodes.push_back(key);
      p.retain_keys.insert(p.retain_keys.end(), param_keys.begin(), param_keys.end());
    } else if (in_f && in_r) {
      p.shared_nodes.push_back(key);
      p.shared_keys.insert(p.shared_keys.end(), param_keys.begin(), param_keys.end());
    }
    if (in_f || in_r) assigned.insert(param_keys.begin(), param_keys.end());
  }
  for (const auto& [key, mat] : state.params)
    if (!assigned.count(key)) p.untouched_keys.push_back(key);
  return p;
}

}  // namespace cure
