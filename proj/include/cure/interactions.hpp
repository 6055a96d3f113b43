#pragma once
// User-item interaction data: ingestion, synthesis, prompt rendering and splits.

#include "cure/common.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace cure {

using json = nlohmann::ordered_json;

struct Interaction {
  int user = 0;
  int item = 0;
  int label = 0;  // 1 = positive ("Yes"), 0 = negative ("No")
  std::int64_t timestamp = 0;
};

// Bipartite user-item graph with binary labels. Immutable after construction.
struct InteractionGraph {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::vector<Interaction> edges;               // edge id = index
  std::vector<std::vector<int>> edges_of_user;  // edge ids per user
  std::vector<std::vector<int>> edges_of_item;  // edge ids per item
  // Latent cluster assignments; populated by synthesize(), empty otherwise.
  std::vector<int> user_cluster;
  std::vector<int> item_cluster;

  int num_users() const { return static_cast<int>(user_names.size()); }
  int num_items() const { return static_cast<int>(item_names.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }

  void build_adjacency();
  void validate() const;
  std::uint64_t content_hash() const;
  double positive_rate() const;

  json to_json() const;
  static InteractionGraph from_json(const json& j);
};

// `rating > threshold` maps to label 1. Rows: user<TAB>item<TAB>rating<TAB>timestamp.
InteractionGraph ingest_tsv(const std::string& path, int rating_threshold, bool has_header = false);

struct SynthParams {
  int num_users = 200;
  int num_items = 150;
  int clusters = 3;
  int mean_degree = 8;
  double intra_pick = 0.6;  // probability a sampled item comes from the user's cluster
  double pos_intra = 0.9;   // P(label=1) for intra-cluster pairs
  double pos_cross = 0.1;   // P(label=1) for cross-cluster pairs
};

InteractionGraph synthesize(const SynthParams& params, std::uint64_t seed);

struct PromptTemplate {
  std::string text =
      "a user liked the items {history} ; will the user also like {target} ? answer :";
  int max_history = 10;
};

// Closed-vocabulary word tokenizer: template words, the two answer words, then
// one token per item name. Guarantees single-token answers and exact item spans.
struct Tokenizer {
  std::vector<std::string> vocab;
  std::unordered_map<std::string, int> id_of;
  int yes_id = -1;
  int no_id = -1;

  static Tokenizer build(const PromptTemplate& tmpl, const InteractionGraph& graph);
  int require(const std::string& word) const;
  int size() const { return static_cast<int>(vocab.size()); }
};

struct PromptSample {
  int user = -1;
  std::vector<int> history;  // item ids, timestamp-ascending, already truncated
  int target_item = -1;
  std::vector<int> tokens;  // rendered instruction
  int answer = 1;           // 1 = Yes, 0 = No
  std::map<int, std::pair<int, int>> item_spans;  // item id -> [begin, end) token range
  int edge_id = -1;                               // -1 for synthetic negatives

  int answer_position() const { return static_cast<int>(tokens.size()) - 1; }
};

// Pure: identical inputs produce the identical token sequence.
PromptSample render_prompt(const InteractionGraph& graph, const Tokenizer& tok,
                           const PromptTemplate& tmpl, int user,
                           const std::vector<int>& history_items, int target_item, int answer,
                           int edge_id = -1);

enum class DeletionMode { Interaction, User, Item };

std::string to_string(DeletionMode m);
DeletionMode deletion_mode_from_string(const std::string& s);

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<PromptSample> train, val, test;
  std::vector<int> forget_indices;  // indices into train, ascending
  std::vector<int> retain_indices;  // complement of forget_indices, ascending
  std::vector<int> train_edges, val_edges, test_edges;
  DeletionMode mode = DeletionMode::Interaction;
  std::uint64_t seed = 0;
  double forget_fraction = 0.2;

  std::vector<PromptSample> forget_samples() const;
  std::vector<PromptSample> retain_samples() const;
  json manifest() const;
};

DatasetSplit make_split(const InteractionGraph& graph, const Tokenizer& tok,
                        const PromptTemplate& tmpl, SplitRatios ratios, double forget_fraction,
                        DeletionMode mode, std::uint64_t seed);

// Per-user items with no observed interaction; used to draw training negatives.
struct NegativeSampler {
  std::vector<std::vector<int>> candidates;  // per user, ascending item ids
  static NegativeSampler build(const InteractionGraph& graph);
  std::optional<int> draw(int user, Rng& rng) const;
};

}  // namespace cure
