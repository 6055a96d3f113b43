#pragma once
// Shared fixtures and independent oracles for the test suites. Oracles here
// must not reuse the implementation paths they check.

#include "cure/eval.hpp"
#include "cure/interactions.hpp"
#include "cure/model.hpp"
#include "cure/ppr.hpp"
#include "cure/trainer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace cure::testing {

// --- dataset fixtures --------------------------------------------------------

struct TinyWorld {
  InteractionGraph graph;
  PromptTemplate tmpl;
  Tokenizer tok;
  DatasetSplit split;
  ModelConfig model_config;  // tiny dimensions for oracle-heavy tests
};

// Small clustered dataset plus a tiny (1-layer, 2-head) model config.
inline TinyWorld make_tiny_world(std::uint64_t seed = 11, int users = 24, int items = 18,
                                 int clusters = 3) {
  TinyWorld w;
  SynthParams p;
  p.num_users = users;
  p.num_items = items;
  p.clusters = clusters;
  p.mean_degree = 5;
  w.graph = synthesize(p, seed);
  w.tmpl.max_history = 6;
  w.tok = Tokenizer::build(w.tmpl, w.graph);
  w.split = make_split(w.graph, w.tok, w.tmpl, SplitRatios{}, 0.2, DeletionMode::Interaction,
                       seed);
  int longest = 0;
  for (const auto& s : w.split.train) longest = std::max<int>(longest, s.tokens.size());
  for (const auto& s : w.split.val) longest = std::max<int>(longest, s.tokens.size());
  for (const auto& s : w.split.test) longest = std::max<int>(longest, s.tokens.size());
  w.model_config.layers = 1;
  w.model_config.heads = 2;
  w.model_config.width = 16;
  w.model_config.mlp_width = 24;
  w.model_config.vocab = w.tok.size();
  w.model_config.max_seq = longest;
  w.model_config.yes_token = w.tok.yes_id;
  w.model_config.no_token = w.tok.no_id;
  w.model_config.seed = seed;
  return w;
}

// Two-layer "toy" config on the same dataset (the attribution fixtures).
inline ModelConfig toy_two_layer_config(const TinyWorld& w, std::uint64_t seed = 11) {
  ModelConfig c = w.model_config;
  c.layers = 2;
  c.heads = 4;
  c.width = 32;
  c.mlp_width = 48;
  c.seed = seed;
  return c;
}

// A briefly trained model over the tiny world; nonlinearities active.
inline ModelState train_fixture_model(const TinyWorld& w, const ModelConfig& cfg, int epochs = 6,
                                      double lr = 3e-3) {
  OptimizerConfig opt;
  opt.lr = lr;
  opt.epochs = epochs;
  opt.batch_size = 16;
  opt.negatives_per_positive = 1;
  opt.threads = 2;
  return train_model(ModelState::init(cfg), w.graph, w.tok, w.tmpl, w.split.train, {}, opt,
                     cfg.seed)
      .state;
}

// --- numeric oracles ---------------------------------------------------------

// Central finite difference of a scalar functional wrt one parameter entry.
template <typename LossFn>
double central_difference(ModelState state, const std::string& key, int r, int c, double h,
                          LossFn&& loss_of) {
  double saved = state.params.at(key)(r, c);
  state.params.at(key)(r, c) = saved + h;
  double up = loss_of(state);
  state.params.at(key)(r, c) = saved - h;
  double down = loss_of(state);
  state.params.at(key)(r, c) = saved;
  return (up - down) / (2.0 * h);
}

inline double spearman_rank_correlation(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&x](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
      double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
      i = j + 1;
    }
    return r;
  };
  auto ra = ranks(a), rb = ranks(b);
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double num = 0, da = 0, db = 0;
  for (std::size_t i2 = 0; i2 < ra.size(); ++i2) {
    num += (ra[i2] - ma) * (rb[i2] - mb);
    da += (ra[i2] - ma) * (ra[i2] - ma);
    db += (rb[i2] - mb) * (rb[i2] - mb);
  }
  if (da <= 0 || db <= 0) return 0;
  return num / std::sqrt(da * db);
}

// Dense PPR oracle: pi = (1-walk) (I - walk P^T)^{-1} p over the bipartite
// adjacency, built independently of the push solver.
inline Eigen::VectorXd dense_ppr_oracle(const InteractionGraph& g,
                                        const std::map<int, double>& preference, double walk) {
  int n = g.num_users() + g.num_items();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (int u = 0; u < g.num_users(); ++u) {
    const auto& es = g.edges_of_user[u];
    if (es.empty()) continue;
    for (int eid : es) P(u, g.num_users() + g.edges[eid].item) = 1.0 / es.size();
  }
  for (int i = 0; i < g.num_items(); ++i) {
    const auto& es = g.edges_of_item[i];
    if (es.empty()) continue;
    for (int eid : es) P(g.num_users() + i, g.edges[eid].user) = 1.0 / es.size();
  }
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
  for (const auto& [node, mass] : preference) p(node) = mass;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - walk * P.transpose();
  return A.colPivHouseholderQr().solve((1.0 - walk) * p);
}

// Random bipartite graph for PPR properties (labels irrelevant there).
inline InteractionGraph random_bipartite(std::uint64_t seed, int users, int items,
                                         double edge_prob) {
  InteractionGraph g;
  char buf[16];
  for (int u = 0; u < users; ++u) {
    std::snprintf(buf, sizeof(buf), "u%d", u);
    g.user_names.emplace_back(buf);
  }
  for (int i = 0; i < items; ++i) {
    std::snprintf(buf, sizeof(buf), "i%d", i);
    g.item_names.emplace_back(buf);
  }
  Rng rng(seed);
  std::int64_t ts = 0;
  for (int u = 0; u < users; ++u)
    for (int i = 0; i < items; ++i)
      if (draw_unit(rng) < edge_prob)
        g.edges.push_back({u, i, draw_unit(rng) < 0.5 ? 1 : 0, ts++});
  g.build_adjacency();
  return g;
}

}  // namespace cure::testing
