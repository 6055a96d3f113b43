#include "cure/ppr.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>

namespace cure {

namespace {
std::atomic<long> g_push_count{0};
}

long ppr_push_count() { return g_push_count.load(std::memory_order_relaxed); }
void reset_ppr_push_count() { g_push_count.store(0, std::memory_order_relaxed); }

double PprVector::total_mass() const {
  double s = 0;
  for (const auto& [n, v] : mass) s += v;
  return s;
}

PprVector push_ppr(const InteractionGraph& graph, const std::map<int, double>& preference,
                   const PprOptions& opt, std::map<int, double>* residual_out) {
  if (opt.alpha <= 0.0 || opt.alpha >= 1.0) throw ConfigError("ppr alpha must lie in (0,1)");
  if (opt.eps <= 0.0) throw ConfigError("ppr eps must be positive");
  const double walk = opt.walk_prob();
  const int n_nodes = graph.num_users() + graph.num_items();

  // degree / neighbor access over the undirected bipartite adjacency
  auto neighbors_of = [&graph](int node, std::vector<int>& out) {
    out.clear();
    if (node < graph.num_users()) {
      for (int eid : graph.edges_of_user[node])
        out.push_back(item_node(graph, graph.edges[eid].item));
    } else {
      for (int eid : graph.edges_of_item[node - graph.num_users()])
        out.push_back(user_node(graph.edges[eid].user));
    }
  };

  std::vector<double> residual(n_nodes, 0.0), estimate(n_nodes, 0.0);
  std::vector<char> queued(n_nodes, 0);
  std::deque<int> queue;
  for (const auto& [node, p] : preference) {
    if (node < 0 || node >= n_nodes) throw ConfigError("ppr preference references unknown node");
    if (p < 0) throw ConfigError("ppr preference mass must be nonnegative");
    residual[node] += p;
    if (residual[node] >= opt.eps && !queued[node]) {
      queue.push_back(node);
      queued[node] = 1;
    }
  }

  std::vector<int> nbrs;
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    queued[u] = 0;
    double r = residual[u];
    if (r < opt.eps) continue;
    residual[u] = 0.0;
    estimate[u] += (1.0 - walk) * r;
    g_push_count.fetch_add(1, std::memory_order_relaxed);
    neighbors_of(u, nbrs);
    if (nbrs.empty()) continue;  // dangling node: the walk mass dies here
    double share = walk * r / static_cast<double>(nbrs.size());
    for (int v : nbrs) {
      residual[v] += share;
      if (residual[v] >= opt.eps && !queued[v]) {
        queue.push_back(v);
        queued[v] = 1;
      }
    }
  }

  PprVector out;
  out.alpha = opt.alpha;
  out.eps = opt.eps;
  for (int v = 0; v < n_nodes; ++v)
    if (estimate[v] > 0.0) out.mass[v] = estimate[v];
  if (residual_out) {
    residual_out->clear();
    for (int v = 0; v < n_nodes; ++v)
      if (residual[v] != 0.0) (*residual_out)[v] = residual[v];
  }
  return out;
}

ItemPprCache ItemPprCache::compute(const InteractionGraph& graph, const PprOptions& opt,
                                   int threads) {
  ItemPprCache cache;
  cache.opt_ = opt;
  cache.graph_hash_ = graph.content_hash();
  cache.vectors_.resize(graph.num_items());
  parallel_chunks(graph.num_items(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      std::map<int, double> one_hot{{item_node(graph, static_cast<int>(i)), 1.0}};
      cache.vectors_[i] = push_ppr(graph, one_hot, opt);
      cache.vectors_[i].source = "item:" + std::to_string(i);
    }
  });
  return cache;
}

namespace {
constexpr char kPprCacheMagic[9] = "CUREPPRC";
}

void ItemPprCache::save(const std::string& path) const {
  json index;
  index["graph_hash"] = graph_hash_;
  index["alpha"] = opt_.alpha;
  index["eps"] = opt_.eps;
  index["swap_alpha_role"] = opt_.swap_alpha_role;
  json counts = json::array();
  for (const auto& v : vectors_) counts.push_back(v.mass.size());
  index["entry_counts"] = counts;
  std::string hs = index.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write ppr cache: " + path);
  out.write(kPprCacheMagic, 8);
  std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& v : vectors_) {
    for (const auto& [node, mass] : v.mass) {
      std::uint32_t n = static_cast<std::uint32_t>(node);
      out.write(reinterpret_cast<const char*>(&n), sizeof(n));
      out.write(reinterpret_cast<const char*>(&mass), sizeof(mass));
    }
  }
}

std::optional<ItemPprCache> ItemPprCache::load(const std::string& path,
                                               const InteractionGraph& graph,
                                               const PprOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kPprCacheMagic, 8) != 0) return std::nullopt;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) return std::nullopt;
  json index = json::parse(hs, nullptr, false);
  if (index.is_discarded()) return std::nullopt;

  if (index.value("graph_hash", std::uint64_t{0}) != graph.content_hash()) return std::nullopt;
  if (index.value("alpha", -1.0) != opt.alpha || index.value("eps", -1.0) != opt.eps ||
      index.value("swap_alpha_role", false) != opt.swap_alpha_role)
    return std::nullopt;
  auto counts = index.at("entry_counts").get<std::vector<std::size_t>>();
  if (static_cast<int>(counts.size()) != graph.num_items()) return std::nullopt;

  ItemPprCache cache;
  cache.opt_ = opt;
  cache.graph_hash_ = graph.content_hash();
  cache.vectors_.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    auto& v = cache.vectors_[i];
    v.alpha = opt.alpha;
    v.eps = opt.eps;
    v.source = "item:" + std::to_string(i);
    for (std::size_t k = 0; k < counts[i]; ++k) {
      std::uint32_t node = 0;
      double mass = 0;
      in.read(reinterpret_cast<char*>(&node), sizeof(node));
      in.read(reinterpret_cast<char*>(&mass), sizeof(mass));
      if (!in) return std::nullopt;
      v.mass[static_cast<int>(node)] = mass;
    }
  }
  return cache;
}

const PprVector& ItemPprCache::item_vector(int item) const {
  if (item < 0 || item >= static_cast<int>(vectors_.size()))
    throw ConfigError("item id outside the precomputed range");
  return vectors_[item];
}

ItemPprCache precompute_item_vectors(const InteractionGraph& graph, const PprOptions& opt,
                                     const std::string& cache_path, int threads) {
  if (!cache_path.empty()) {
    auto cached = ItemPprCache::load(cache_path, graph, opt);
    if (cached) return std::move(*cached);
  }
  ItemPprCache cache = ItemPprCache::compute(graph, opt, threads);
  if (!cache_path.empty()) cache.save(cache_path);
  return cache;
}

std::map<int, double> item_importance(const Model& model, const PromptSample& sample) {
  if (sample.item_spans.empty()) throw AttributionError("sample carries no item spans");
  ForwardRecord rec = model.forward(sample, RecordLevel::MessagesAndGrads);
  std::map<int, double> importance;
  for (const auto& [item, span] : sample.item_spans) {
    if (item == sample.target_item) continue;  // history items only
    double s = 0;
    for (int t = span.first; t < span.second; ++t) {
      if (t < 0 || t >= static_cast<int>(rec.embedding_grad.size()))
        throw AttributionError("item span outside the token range");
      s += rec.embedding_grad[t].norm();
    }
    importance[item] = s;
  }
  if (importance.empty()) throw AttributionError("sample has no history item spans");
  return importance;
}

PprVector combine_ppr(const ItemPprCache& cache, const std::map<int, double>& importance,
                      double tau) {
  if (importance.empty()) throw ConfigError("cannot combine an empty history");
  double max_s = -std::numeric_limits<double>::infinity();
  for (const auto& [item, s] : importance) max_s = std::max(max_s, tau * s);
  double z = 0;
  std::map<int, double> weight;
  for (const auto& [item, s] : importance) {
    double w = std::exp(tau * s - max_s);
    weight[item] = w;
    z += w;
  }

  PprVector out;
  out.alpha = cache.options().alpha;
  out.eps = cache.options().eps;
  out.source = "combined";
  for (const auto& [item, w] : weight) {
    const PprVector& pre = cache.item_vector(item);
    double coeff = w / z;
    for (const auto& [node, mass] : pre.mass) out.mass[node] += coeff * mass;
  }
  return out;
}

CorruptCandidate build_corrupt_sample(const Model& model, const InteractionGraph& graph,
                                      const Tokenizer& tok, const PromptTemplate& tmpl,
                                      const ItemPprCache& cache, const PromptSample& sample,
                                      const CorruptParams& params, std::string* warning) {
  if (sample.history.empty()) throw AttributionError("corrupt construction needs history");

  auto importance = item_importance(model, sample);

  // Most influential history items, ties broken by item id.
  std::vector<std::pair<double, int>> ranked;
  for (const auto& [item, s] : importance) ranked.emplace_back(-s, item);
  std::sort(ranked.begin(), ranked.end());
  std::vector<int> influential;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(params.top_influential); ++i)
    influential.push_back(ranked[i].second);

  PprVector pi = combine_ppr(cache, importance, params.tau);

  // Preferred pool: top items by PPR mass, excluding the history and target.
  std::set<int> excluded(sample.history.begin(), sample.history.end());
  excluded.insert(sample.target_item);
  std::vector<std::pair<double, int>> pool_ranked;
  for (const auto& [node, mass] : pi.mass) {
    if (node < graph.num_users()) continue;
    int item = node - graph.num_users();
    if (excluded.count(item)) continue;
    pool_ranked.emplace_back(-mass, item);
  }
  std::sort(pool_ranked.begin(), pool_ranked.end());
  if (static_cast<int>(pool_ranked.size()) > params.preferred_pool)
    pool_ranked.resize(params.preferred_pool);
  if (static_cast<int>(pool_ranked.size()) < params.preferred_pool && warning)
    *warning = "preferred set shrunk to " + std::to_string(pool_ranked.size()) +
               " items with positive ppr mass";

  // Least relevant candidates within the pool: lowest mass first, ties by item id.
  std::vector<std::pair<double, int>> tail;
  for (const auto& [neg_mass, item] : pool_ranked) tail.emplace_back(-neg_mass, item);
  std::sort(tail.begin(), tail.end());
  std::vector<int> replacements;
  for (std::size_t i = 0; i < tail.size() && i < static_cast<std::size_t>(params.replacements); ++i)
    replacements.push_back(tail[i].second);

  if (influential.empty() || replacements.empty())
    throw AttributionError("corrupt candidate set is empty");

  CorruptCandidate best;
  best.delta = std::numeric_limits<double>::infinity();
  int evaluated = 0;
  for (int victim : influential) {
    auto pos = std::find(sample.history.begin(), sample.history.end(), victim);
    if (pos == sample.history.end()) continue;
    std::size_t idx = static_cast<std::size_t>(pos - sample.history.begin());
    for (int repl : replacements) {
      std::vector<int> new_hist = sample.history;
      new_hist[idx] = repl;
      PromptSample corrupt = render_prompt(graph, tok, tmpl, sample.user, new_hist,
                                           sample.target_item, sample.answer, -1);
      double delta = model.forward(corrupt).delta;
      ++evaluated;
      if (delta < best.delta) {
        best.replaced_item = victim;
        best.replacement_item = repl;
        best.sample = std::move(corrupt);
        best.delta = delta;
      }
    }
  }
  if (evaluated == 0) throw AttributionError("corrupt candidate set is empty");
  best.candidates_evaluated = evaluated;
  return best;
}

std::vector<int> select_retain_buffer(const InteractionGraph& graph,
                                      const std::vector<PromptSample>& train,
                                      const std::vector<int>& forget_indices,
                                      const std::vector<int>& retain_indices, int k,
                                      const PprOptions& opt, std::string* warning) {
  if (k < 1) throw ConfigError("retain multiplier k must be >= 1");
  if (forget_indices.empty()) throw ConfigError("forget set is empty");
  if (retain_indices.empty()) throw ConfigError("retain pool is empty");

  // Sources: union of the forget edges' endpoints, uniform preference.
  std::set<int> sources;
  for (int i : forget_indices) {
    const auto& s = train.at(i);
    sources.insert(user_node(s.user));
    sources.insert(item_node(graph, s.target_item));
  }
  std::map<int, double> preference;
  for (int node : sources) preference[node] = 1.0 / static_cast<double>(sources.size());
  PprVector pi = push_ppr(graph, preference, opt);

  std::vector<std::pair<double, int>> ranked;  // (-score, retain index)
  for (int i : retain_indices) {
    const auto& s = train.at(i);
    double score = pi.at(user_node(s.user)) + pi.at(item_node(graph, s.target_item));
    ranked.emplace_back(-score, i);
  }
  std::sort(ranked.begin(), ranked.end());

  std::size_t want = static_cast<std::size_t>(k) * forget_indices.size();
  if (want > ranked.size()) {
    if (warning)
      *warning = "retain buffer capped at pool size " + std::to_string(ranked.size());
    want = ranked.size();
  }
  std::vector<int> out;
  out.reserve(want);
  for (std::size_t i = 0; i < want; ++i) out.push_back(ranked[i].second);
  return out;
}

}  // namespace cure
