#include "cure/interactions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cure {

void InteractionGraph::build_adjacency() {
  edges_of_user.assign(user_names.size(), {});
  edges_of_item.assign(item_names.size(), {});
  for (int e = 0; e < num_edges(); ++e) {
    edges_of_user[edges[e].user].push_back(e);
    edges_of_item[edges[e].item].push_back(e);
  }
}

void InteractionGraph::validate() const {
  std::set<std::pair<int, int>> seen;
  for (const auto& e : edges) {
    if (e.user < 0 || e.user >= num_users()) throw ParseError("edge references unknown user");
    if (e.item < 0 || e.item >= num_items()) throw ParseError("edge references unknown item");
    if (e.label != 0 && e.label != 1) throw ParseError("edge label must be 0 or 1");
    if (!seen.emplace(e.user, e.item).second)
      throw ParseError("duplicate (user,item) interaction");
  }
}

std::uint64_t InteractionGraph::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& n : user_names) h = hash_str(n, h);
  for (const auto& n : item_names) h = hash_str(n, h);
  for (const auto& e : edges) {
    h = hash_u64(static_cast<std::uint64_t>(e.user), h);
    h = hash_u64(static_cast<std::uint64_t>(e.item), h);
    h = hash_u64(static_cast<std::uint64_t>(e.label), h);
    h = hash_u64(static_cast<std::uint64_t>(e.timestamp), h);
  }
  return h;
}

double InteractionGraph::positive_rate() const {
  if (edges.empty()) return 0.0;
  double pos = 0;
  for (const auto& e : edges) pos += e.label;
  return pos / static_cast<double>(edges.size());
}

json InteractionGraph::to_json() const {
  json j;
  j["users"] = user_names;
  j["items"] = item_names;
  json je = json::array();
  for (const auto& e : edges) je.push_back({e.user, e.item, e.label, e.timestamp});
  j["edges"] = je;
  j["user_cluster"] = user_cluster;
  j["item_cluster"] = item_cluster;
  return j;
}

InteractionGraph InteractionGraph::from_json(const json& j) {
  InteractionGraph g;
  g.user_names = j.at("users").get<std::vector<std::string>>();
  g.item_names = j.at("items").get<std::vector<std::string>>();
  for (const auto& je : j.at("edges")) {
    Interaction e;
    e.user = je.at(0).get<int>();
    e.item = je.at(1).get<int>();
    e.label = je.at(2).get<int>();
    e.timestamp = je.at(3).get<std::int64_t>();
    g.edges.push_back(e);
  }
  g.user_cluster = j.value("user_cluster", std::vector<int>{});
  g.item_cluster = j.value("item_cluster", std::vector<int>{});
  g.build_adjacency();
  g.validate();
  return g;
}

InteractionGraph ingest_tsv(const std::string& path, int rating_threshold, bool has_header) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open interaction file: " + path);

  InteractionGraph g;
  std::unordered_map<std::string, int> user_id, item_id;
  std::set<std::pair<int, int>> seen;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && has_header) continue;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string user, item, rating_s, ts_s;
    if (!std::getline(ss, user, '\t') || !std::getline(ss, item, '\t') ||
        !std::getline(ss, rating_s, '\t') || !std::getline(ss, ts_s, '\t')) {
      throw ParseError("malformed row at line " + std::to_string(line_no));
    }
    int rating = 0;
    std::int64_t ts = 0;
    try {
      rating = std::stoi(rating_s);
      ts = std::stoll(ts_s);
    } catch (const std::exception&) {
      throw ParseError("malformed numeric field at line " + std::to_string(line_no));
    }
    auto uid = user_id.emplace(user, static_cast<int>(g.user_names.size()));
    if (uid.second) g.user_names.push_back(user);
    auto iid = item_id.emplace(item, static_cast<int>(g.item_names.size()));
    if (iid.second) g.item_names.push_back(item);
    Interaction e;
    e.user = uid.first->second;
    e.item = iid.first->second;
    e.label = rating > rating_threshold ? 1 : 0;
    e.timestamp = ts;
    if (!seen.emplace(e.user, e.item).second)
      throw ParseError("duplicate (user,item) interaction at line " + std::to_string(line_no));
    g.edges.push_back(e);
  }
  if (g.edges.empty()) throw ParseError("empty dataset: " + path);
  g.build_adjacency();
  g.validate();
  return g;
}

InteractionGraph synthesize(const SynthParams& p, std::uint64_t seed) {
  if (p.num_users < 1 || p.num_items < 1 || p.clusters < 1 || p.mean_degree < 1)
    throw ConfigError("synthesize: all counts must be >= 1");
  if (p.clusters > p.num_items)
    throw ConfigError("synthesize: cluster_count exceeds num_items");

  InteractionGraph g;
  char buf[32];
  for (int u = 0; u < p.num_users; ++u) {
    std::snprintf(buf, sizeof(buf), "u%03d", u);
    g.user_names.emplace_back(buf);
  }
  for (int i = 0; i < p.num_items; ++i) {
    std::snprintf(buf, sizeof(buf), "item_%03d", i);
    g.item_names.emplace_back(buf);
  }

  Rng rng(seed);
  g.user_cluster.resize(p.num_users);
  g.item_cluster.resize(p.num_items);
  for (int u = 0; u < p.num_users; ++u) g.user_cluster[u] = u % p.clusters;
  for (int i = 0; i < p.num_items; ++i) g.item_cluster[i] = i % p.clusters;

  std::vector<std::vector<int>> items_by_cluster(p.clusters);
  for (int i = 0; i < p.num_items; ++i) items_by_cluster[g.item_cluster[i]].push_back(i);

  std::int64_t ts = 0;
  for (int u = 0; u < p.num_users; ++u) {
    int degree = 1 + static_cast<int>(draw_int(rng, 0, 2 * p.mean_degree - 2));
    degree = std::min(degree, p.num_items);
    std::set<int> picked;
    int guard = 0;
    while (static_cast<int>(picked.size()) < degree && guard < 50 * degree) {
      ++guard;
      int item;
      if (draw_unit(rng) < p.intra_pick) {
        const auto& pool = items_by_cluster[g.user_cluster[u]];
        item = pool[draw_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1)];
      } else {
        item = static_cast<int>(draw_int(rng, 0, p.num_items - 1));
      }
      if (!picked.insert(item).second) continue;
      bool intra = g.item_cluster[item] == g.user_cluster[u];
      double p_pos = intra ? p.pos_intra : p.pos_cross;
      Interaction e;
      e.user = u;
      e.item = item;
      e.label = draw_unit(rng) < p_pos ? 1 : 0;
      e.timestamp = ts++;
      g.edges.push_back(e);
    }
  }
  g.build_adjacency();
  g.validate();
  return g;
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

}  // namespace

Tokenizer Tokenizer::build(const PromptTemplate& tmpl, const InteractionGraph& graph) {
  Tokenizer t;
  auto add = [&t](const std::string& w) {
    if (t.id_of.emplace(w, static_cast<int>(t.vocab.size())).second) t.vocab.push_back(w);
  };
  for (const auto& w : split_words(tmpl.text)) {
    if (w == "{history}" || w == "{target}") continue;
    add(w);
  }
  add("Yes");
  add("No");
  for (const auto& name : graph.item_names) add(name);
  t.yes_id = t.id_of.at("Yes");
  t.no_id = t.id_of.at("No");
  return t;
}

int Tokenizer::require(const std::string& word) const {
  auto it = id_of.find(word);
  if (it == id_of.end()) throw ParseError("token not in vocabulary: " + word);
  return it->second;
}

PromptSample render_prompt(const InteractionGraph& graph, const Tokenizer& tok,
                           const PromptTemplate& tmpl, int user,
                           const std::vector<int>& history_items, int target_item, int answer,
                           int edge_id) {
  if (history_items.empty()) throw ParseError("render_prompt: empty history");
  if (target_item < 0 || target_item >= graph.num_items())
    throw ParseError("render_prompt: unknown target item");

  PromptSample s;
  s.user = user;
  s.target_item = target_item;
  s.answer = answer;
  s.edge_id = edge_id;

  // Keep the most recent max_history entries; order stays timestamp-ascending.
  int keep = std::min<int>(tmpl.max_history, static_cast<int>(history_items.size()));
  s.history.assign(history_items.end() - keep, history_items.end());

  for (const auto& w : split_words(tmpl.text)) {
    if (w == "{history}") {
      for (int item : s.history) {
        int begin = static_cast<int>(s.tokens.size());
        s.tokens.push_back(tok.require(graph.item_names.at(item)));
        s.item_spans[item] = {begin, begin + 1};
      }
    } else if (w == "{target}") {
      int begin = static_cast<int>(s.tokens.size());
      s.tokens.push_back(tok.require(graph.item_names.at(target_item)));
      s.item_spans[target_item] = {begin, begin + 1};
    } else {
      s.tokens.push_back(tok.require(w));
    }
  }
  return s;
}

std::string to_string(DeletionMode m) {
  switch (m) {
    case DeletionMode::Interaction: return "interaction";
    case DeletionMode::User: return "user";
    case DeletionMode::Item: return "item";
  }
  return "interaction";
}

DeletionMode deletion_mode_from_string(const std::string& s) {
  if (s == "interaction") return DeletionMode::Interaction;
  if (s == "user") return DeletionMode::User;
  if (s == "item") return DeletionMode::Item;
  throw ConfigError("unknown deletion mode: " + s);
}

std::vector<PromptSample> DatasetSplit::forget_samples() const {
  std::vector<PromptSample> out;
  out.reserve(forget_indices.size());
  for (int i : forget_indices) out.push_back(train[i]);
  return out;
}

std::vector<PromptSample> DatasetSplit::retain_samples() const {
  std::vector<PromptSample> out;
  out.reserve(retain_indices.size());
  for (int i : retain_indices) out.push_back(train[i]);
  return out;
}

json DatasetSplit::manifest() const {
  json j;
  j["seed"] = seed;
  j["mode"] = to_string(mode);
  j["forget_fraction"] = forget_fraction;
  j["train_edges"] = train_edges;
  j["val_edges"] = val_edges;
  j["test_edges"] = test_edges;
  std::vector<int> forget_edges;
  for (int i : forget_indices) forget_edges.push_back(train[i].edge_id);
  j["forget_edges"] = forget_edges;
  return j;
}

namespace {

// History for edge e: the user's positive train interactions excluding the
// target item, timestamp-ascending. Empty history means the edge is skipped.
std::vector<int> history_for_edge(const InteractionGraph& graph,
                                  const std::vector<char>& edge_in_train, const Interaction& e) {
  std::vector<std::pair<std::int64_t, int>> hist;
  for (int eid : graph.edges_of_user[e.user]) {
    const auto& other = graph.edges[eid];
    if (!edge_in_train[eid] || other.label != 1 || other.item == e.item) continue;
    hist.emplace_back(other.timestamp, other.item);
  }
  std::sort(hist.begin(), hist.end());
  std::vector<int> items;
  items.reserve(hist.size());
  for (const auto& [ts, item] : hist) items.push_back(item);
  return items;
}

}  // namespace

DatasetSplit make_split(const InteractionGraph& graph, const Tokenizer& tok,
                        const PromptTemplate& tmpl, SplitRatios ratios, double forget_fraction,
                        DeletionMode mode, std::uint64_t seed) {
  double ratio_sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(ratio_sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (forget_fraction <= 0.0 || forget_fraction >= 1.0)
    throw ConfigError("forget fraction must lie in (0,1)");
  if (graph.num_edges() == 0) throw ConfigError("cannot split an empty graph");

  DatasetSplit out;
  out.mode = mode;
  out.seed = seed;
  out.forget_fraction = forget_fraction;

  std::vector<int> order(graph.num_edges());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  int n = graph.num_edges();
  int n_train = static_cast<int>(std::lround(ratios.train * n));
  int n_val = static_cast<int>(std::lround(ratios.val * n));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);

  out.train_edges.assign(order.begin(), order.begin() + n_train);
  out.val_edges.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test_edges.assign(order.begin() + n_train + n_val, order.end());

  std::vector<char> edge_in_train(n, 0);
  for (int e : out.train_edges) edge_in_train[e] = 1;

  auto render_edge_set = [&](const std::vector<int>& edge_ids, std::vector<PromptSample>& dest) {
    for (int eid : edge_ids) {
      const auto& e = graph.edges[eid];
      auto hist = history_for_edge(graph, edge_in_train, e);
      if (hist.empty()) continue;  // user has no usable history for this target
      dest.push_back(render_prompt(graph, tok, tmpl, e.user, hist, e.item,
                                   e.label == 1 ? 1 : 0, eid));
    }
  };
  render_edge_set(out.train_edges, out.train);
  render_edge_set(out.val_edges, out.val);
  render_edge_set(out.test_edges, out.test);

  if (out.train.empty()) throw ConfigError("train split is empty after rendering");

  int n_samples = static_cast<int>(out.train.size());
  int want = static_cast<int>(std::lround(forget_fraction * n_samples));
  want = std::max(1, std::min(want, n_samples));

  std::set<int> forget;
  if (mode == DeletionMode::Interaction) {
    std::vector<int> idx(n_samples);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    forget.insert(idx.begin(), idx.begin() + want);
  } else {
    // Whole-entity deletion: add entities until the fraction is met; the
    // last entity may overshoot by its own edge count.
    std::map<int, std::vector<int>> by_entity;
    for (int i = 0; i < n_samples; ++i) {
      const auto& s = out.train[i];
      int key = mode == DeletionMode::User ? s.user : s.target_item;
      by_entity[key].push_back(i);
    }
    std::vector<int> entities;
    for (const auto& [k, v] : by_entity) entities.push_back(k);
    std::shuffle(entities.begin(), entities.end(), rng);
    for (int ent : entities) {
      if (static_cast<int>(forget.size()) >= want) break;
      for (int i : by_entity[ent]) forget.insert(i);
    }
  }

  if (forget.empty()) throw ConfigError("forget set is empty after selection");
  if (static_cast<int>(forget.size()) == n_samples)
    throw ConfigError("retain pool is empty: deletion request covers the whole train set");

  out.forget_indices.assign(forget.begin(), forget.end());
  for (int i = 0; i < n_samples; ++i)
    if (!forget.count(i)) out.retain_indices.push_back(i);
  return out;
}

NegativeSampler NegativeSampler::build(const InteractionGraph& graph) {
  NegativeSampler s;
  s.candidates.resize(graph.num_users());
  for (int u = 0; u < graph.num_users(); ++u) {
    std::set<int> interacted;
    for (int eid : graph.edges_of_user[u]) interacted.insert(graph.edges[eid].item);
    for (int i = 0; i < graph.num_items(); ++i)
      if (!interacted.count(i)) s.candidates[u].push_back(i);
  }
  return s;
}

std::optional<int> NegativeSampler::draw(int user, Rng& rng) const {
  const auto& pool = candidates.at(user);
  if (pool.empty()) return std::nullopt;
  return pool[draw_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1)];
}

}  // namespace cure
