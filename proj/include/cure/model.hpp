#pragma once
// A tiny decoder-only transformer recommender with an explicit node/edge view
// of its computation. Every attention head and MLP writes its output into the
// residual stream; the input of a node is the sum of all upstream outputs, so
// per-edge messages at the answer position are recordable and each node's
// input gradient is available from one backward pass.

#include "cure/common.hpp"
#include "cure/interactions.hpp"

#include <atomic>
#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cure {

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int width = 64;
  int mlp_width = 256;
  int vocab = 0;
  int max_seq = 48;
  int yes_token = -1;
  int no_token = -1;
  std::uint64_t seed = 0;
  double init_scale = 0.02;
  // When set, delta = P(Yes) - P(No) uses the full-vocabulary softmax instead
  // of the two-way softmax over the answer tokens.
  bool full_vocab_delta = false;

  int head_dim() const { return width / heads; }
  void validate() const;
  json to_json() const;
  static ModelConfig from_json(const json& j);
};

struct NodeRef {
  enum class Kind { Input, Head, Mlp, Logits };
  Kind kind = Kind::Input;
  int layer = -1;
  int index = -1;

  std::string key() const;
  bool has_parameters() const { return kind == Kind::Head || kind == Kind::Mlp; }
  friend auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

struct DagEdge {
  NodeRef from, to;
  std::string key() const;
};

std::string edge_key(const std::string& from, const std::string& to);

// Topology of the computational DAG. Heads within a layer are parallel
// readers of the same stream, so there are no intra-layer head-head edges.
struct ComputationGraph {
  std::vector<NodeRef> nodes;  // topological order: input, L0 heads, L0 mlp, ..., logits
  std::vector<DagEdge> edges;  // canonical order

  static ComputationGraph build(const ModelConfig& config);
  const std::vector<std::string>& upstream_of(const std::string& node_key) const;
  bool has_edge(const std::string& key) const;
  int num_edges() const { return static_cast<int>(edges.size()); }

 private:
  std::map<std::string, std::vector<std::string>> upstream_;
  std::set<std::string> edge_keys_;
};

// Parameter keys owned by a DAG node ("L0.h2" -> {L0.h2.wq, ...}).
std::vector<std::string> node_parameter_keys(const NodeRef& node);

struct ModelState {
  ModelConfig config;
  std::map<std::string, Mat> params;

  static ModelState init(const ModelConfig& config);
  std::uint64_t content_hash() const;
  std::vector<std::string> parameter_keys() const;
};

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

enum class RecordLevel { None, Messages, MessagesAndGrads };

struct ForwardRecord {
  double z_yes = 0, z_no = 0;
  double p_yes = 0, p_no = 0;  // two-way softmax over the answer logits
  double delta = 0;            // P(Yes)-P(No); softmax scope set by config
  Vec logits;                  // full row at the answer position

  // RecordLevel::Messages and above: node output at the answer position.
  // The message on edge v1->v2 is node_output[v1].
  std::map<std::string, Vec> node_output;
  // Input each non-input node actually read at the answer position.
  std::map<std::string, Vec> node_input;
  // RecordLevel::MessagesAndGrads: d delta / d(node input at the answer position).
  std::map<std::string, Vec> node_input_grad;
  // d delta / d(embedding at position t).
  std::vector<Vec> embedding_grad;
};

struct EdgePatch {
  // edge key -> replacement message (zero vector for ablation).
  std::map<std::string, Vec> replace;
};

struct GradMap {
  std::map<std::string, Mat> g;

  static GradMap zeros_like(const ModelState& state);
  void accumulate(const GradMap& other);
  void scale(double s);
  Vec flatten(const std::vector<std::string>& keys) const;
  bool all_finite() const;
};

struct PassCounts {
  long forwards = 0;
  long backwards = 0;
};

class Model {
 public:
  explicit Model(ModelState state);

  const ModelState& state() const { return state_; }
  ModelState& mutable_state() { return state_; }
  const ModelConfig& config() const { return state_.config; }
  const ComputationGraph& graph() const { return graph_; }

  ForwardRecord forward(const PromptSample& sample,
                        RecordLevel level = RecordLevel::None) const;
  // Exact forward pass with edge messages replaced at the answer position;
  // everything downstream recomputes.
  ForwardRecord intervene_forward(const PromptSample& sample, const EdgePatch& patch) const;

  // loss = -log P(answer) under the two-way answer softmax.
  double nll(const PromptSample& sample, GradMap* grads = nullptr) const;
  // KL(target || current) over the binary answer distribution, where target
  // is given by its P(Yes). Gradients are scaled by grad_scale.
  double kl_from_target(const PromptSample& sample, double target_p_yes,
                        GradMap* grads = nullptr, double grad_scale = 1.0) const;

  PassCounts pass_counts() const;
  void reset_pass_counts() const;

 private:
  struct Activations;
  void run_forward(const PromptSample& sample, const EdgePatch* patch, Activations& acts) const;
  void run_backward(const Activations& acts, const Vec& dlogits, GradMap* param_grads,
                    ForwardRecord* record) const;
  ForwardRecord record_from(const Activations& acts, RecordLevel level) const;
  void finalize_answer_distribution(Activations& acts) const;
  Vec delta_seed(const Activations& acts) const;

  ModelState state_;
  ComputationGraph graph_;
  mutable std::atomic<long> forward_count_{0};
  mutable std::atomic<long> backward_count_{0};
};

}  // namespace cure
