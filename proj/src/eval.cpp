#include "cure/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace cure {

std::optional<double> auc_from_scores(const std::vector<double>& scores,
                                      const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) return std::nullopt;
  long n_pos = std::count(labels.begin(), labels.end(), 1);
  long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // midpoint ranks for ties
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  double rank_sum_pos = 0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == 1) rank_sum_pos += rank[k];
  double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double accuracy_from_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) return 0.0;
  long correct = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    int pred = scores[k] > 0.5 ? 1 : 0;
    correct += pred == labels[k];
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double logloss_from_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) return 0.0;
  double total = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    double p = clamp_prob(labels[k] == 1 ? scores[k] : 1.0 - scores[k]);
    total -= std::log(p);
  }
  return total / static_cast<double>(scores.size());
}

double binary_kl(double p_yes, double q_yes) {
  double p1 = clamp_prob(p_yes), p0 = clamp_prob(1.0 - p_yes);
  double q1 = clamp_prob(q_yes), q0 = clamp_prob(1.0 - q_yes);
  return p1 * std::log(p1 / q1) + p0 * std::log(p0 / q0);
}

double binary_jsd(double p_yes, double q_yes) {
  double m = 0.5 * (p_yes + q_yes);
  return 0.5 * binary_kl(p_yes, m) + 0.5 * binary_kl(q_yes, m);
}

namespace {

std::vector<double> model_scores(const Model& model, const std::vector<PromptSample>& samples,
                                 int threads) {
  std::vector<double> scores(samples.size());
  parallel_chunks(samples.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) scores[i] = model.forward(samples[i]).p_yes;
  });
  return scores;
}

}  // namespace

TestMetrics auc_acc_logloss(const Model& model, const std::vector<PromptSample>& test,
                            int threads) {
  if (test.empty()) throw ConfigError("evaluation set is empty");
  auto scores = model_scores(model, test, threads);
  std::vector<int> labels;
  labels.reserve(test.size());
  for (const auto& s : test) labels.push_back(s.answer);
  TestMetrics m;
  m.auc = auc_from_scores(scores, labels);
  m.acc = accuracy_from_scores(scores, labels);
  m.logloss = logloss_from_scores(scores, labels);
  return m;
}

double jsd_forget(const Model& unlearned, const Model& oracle,
                  const std::vector<PromptSample>& forget, int threads) {
  if (forget.empty()) throw ConfigError("forget set is empty");
  auto p = model_scores(unlearned, forget, threads);
  auto q = model_scores(oracle, forget, threads);
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) total += binary_jsd(p[i], q[i]);
  return total / static_cast<double>(p.size());
}

json ConflictHistogram::to_json() const {
  json j;
  j["severe"] = severe;    // cos in [-1, -0.02)
  j["neutral"] = neutral;  // cos in [-0.02, 0.02]
  j["aligned"] = aligned;  // cos in (0.02, 1]
  return j;
}

ConflictHistogram conflict_histogram(const AlignmentTrace& trace) {
  ConflictHistogram h;
  for (const auto& r : trace.rows) {
    if (!r.cos_psi) continue;
    double c = *r.cos_psi;
    if (c < -0.02)
      ++h.severe;
    else if (c <= 0.02)
      ++h.neutral;
    else
      ++h.aligned;
  }
  return h;
}

json MetricsReport::to_json() const {
  json j;
  j["method"] = method;
  if (auc)
    j["auc"] = *auc;
  else
    j["auc"] = nullptr;
  j["acc"] = acc;
  j["logloss"] = logloss;
  if (jsd_forget)
    j["jsd_forget"] = *jsd_forget;
  else
    j["jsd_forget"] = nullptr;
  j["unlearn_wall_seconds"] = unlearn_wall_seconds;
  j["conflict_rate"] = conflict_rate;
  j["config"] = config_echo;
  return j;
}

std::string MetricsReport::csv_header() const {
  return "run,method,auc,acc,logloss,jsd_forget,unlearn_wall_seconds,conflict_rate";
}

std::string MetricsReport::csv_row(const std::string& run_id) const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%.6g,%.6g,%.6g,%.6g,%.3f,%.6g", run_id.c_str(),
                method.c_str(), auc.value_or(std::nan("")), acc, logloss,
                jsd_forget.value_or(std::nan("")), unlearn_wall_seconds, conflict_rate);
  return buf;
}

ModelState retrain_oracle(const ModelConfig& config, const InteractionGraph& graph,
                          const Tokenizer& tok, const PromptTemplate& tmpl,
                          const std::vector<PromptSample>& retained_train,
                          const std::vector<PromptSample>& val, const OptimizerConfig& opt,
                          std::uint64_t data_seed, const std::string& cache_dir) {
  std::uint64_t h = hash_str(config.to_json().dump());
  h = hash_str(opt.to_json().dump(), h);
  h = hash_u64(data_seed, h);
  h = hash_u64(graph.content_hash(), h);
  for (const auto& s : retained_train) {
    for (int t : s.tokens) h = hash_u64(static_cast<std::uint64_t>(t), h);
    h = hash_u64(static_cast<std::uint64_t>(s.answer), h);
  }

  std::string path;
  if (!cache_dir.empty()) {
    std::filesystem::create_directories(cache_dir);
    char name[64];
    std::snprintf(name, sizeof(name), "oracle_%016llx.ckpt",
                  static_cast<unsigned long long>(h));
    path = (std::filesystem::path(cache_dir) / name).string();
    if (std::filesystem::exists(path)) return load_checkpoint(path);
  }

  ModelState init = ModelState::init(config);
  TrainResult result = train_model(init, graph, tok, tmpl, retained_train, val, opt, data_seed);
  if (!path.empty()) save_checkpoint(result.state, path);
  return result.state;
}

}  // namespace cure
