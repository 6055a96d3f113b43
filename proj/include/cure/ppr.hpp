#pragma once
// Approximate personalized PageRank on the bipartite interaction graph:
// forward-push solver, per-item offline precomputation with a disk cache,
// gradient-weighted online combination, corrupt-prompt construction and
// retain-buffer selection.

#include "cure/interactions.hpp"
#include "cure/model.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cure {

// Node indexing: users occupy [0, num_users), items [num_users, num_users+num_items).
inline int user_node(int user) { return user; }
inline int item_node(const InteractionGraph& g, int item) { return g.num_users() + item; }

struct PprOptions {
  double alpha = 0.85;  // walk-continuation probability
  double eps = 1e-6;    // per-node residual bound
  // The update is pi = alpha P^T pi + (1-alpha) p. This flag swaps alpha's
  // role for conventions that put the decay on the teleport term.
  bool swap_alpha_role = false;

  double walk_prob() const { return swap_alpha_role ? 1.0 - alpha : alpha; }
};

struct PprVector {
  std::map<int, double> mass;  // node -> probability mass; entries below eps may be absent
  double alpha = 0.85;
  double eps = 1e-6;
  std::string source;

  double total_mass() const;
  double at(int node) const {
    auto it = mass.find(node);
    return it == mass.end() ? 0.0 : it->second;
  }
};

// Forward-push approximation; terminates with every residual below eps.
// residual_out, when given, receives the final residual vector.
PprVector push_ppr(const InteractionGraph& graph, const std::map<int, double>& preference,
                   const PprOptions& opt, std::map<int, double>* residual_out = nullptr);

// Telemetry: number of push operations executed since the last reset.
long ppr_push_count();
void reset_ppr_push_count();

// Offline one-hot vectors for every item, cached on disk keyed by
// (graph hash, alpha, eps).
class ItemPprCache {
 public:
  static ItemPprCache compute(const InteractionGraph& graph, const PprOptions& opt, int threads);
  static std::optional<ItemPprCache> load(const std::string& path, const InteractionGraph& graph,
                                          const PprOptions& opt);
  void save(const std::string& path) const;
  const PprVector& item_vector(int item) const;
  const PprOptions& options() const { return opt_; }

 private:
  PprOptions opt_;
  std::uint64_t graph_hash_ = 0;
  std::vector<PprVector> vectors_;  // indexed by item id
};

// Load-or-compute convenience; recomputes (and rewrites) on any key mismatch.
ItemPprCache precompute_item_vectors(const InteractionGraph& graph, const PprOptions& opt,
                                     const std::string& cache_path, int threads);

// S(i) = sum over the item's tokens of ||dDelta/d embedding_t||.
std::map<int, double> item_importance(const Model& model, const PromptSample& sample);

// pi_u = sum_i softmax(tau * S)(i) * pi_pre_i, by PPR's linearity in the preference.
PprVector combine_ppr(const ItemPprCache& cache, const std::map<int, double>& importance,
                      double tau);

struct CorruptCandidate {
  int replaced_item = -1;
  int replacement_item = -1;
  PromptSample sample;
  double delta = 0;
  int candidates_evaluated = 0;
};

struct CorruptParams {
  double tau = 1.0;
  int top_influential = 3;  // most influential history items considered
  int preferred_pool = 50;  // top PPR items forming the preferred set
  int replacements = 10;    // least relevant candidates taken from the pool
};

// Builds the single-item-swap prompt minimizing delta over at most
// top_influential * replacements rendered candidates.
CorruptCandidate build_corrupt_sample(const Model& model, const InteractionGraph& graph,
                                      const Tokenizer& tok, const PromptTemplate& tmpl,
                                      const ItemPprCache& cache, const PromptSample& sample,
                                      const CorruptParams& params,
                                      std::string* warning = nullptr);

// Ranks retain-pool samples by proximity to the forget set (push from the
// union of forget-edge endpoints) and returns the top k*|forget| indices.
std::vector<int> select_retain_buffer(const InteractionGraph& graph,
                                      const std::vector<PromptSample>& train,
                                      const std::vector<int>& forget_indices,
                                      const std::vector<int>& retain_indices, int k,
                                      const PprOptions& opt, std::string* warning = nullptr);

}  // namespace cure
