#pragma once
// Recommendation utility metrics, unlearning effectiveness against the
// retrain oracle, conflict statistics, and the oracle itself.

#include "cure/model.hpp"
#include "cure/trainer.hpp"
#include "cure/unlearn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cure {

// Rank-statistic AUC with midpoint tie handling; nullopt when only one class
// is present.
std::optional<double> auc_from_scores(const std::vector<double>& scores,
                                      const std::vector<int>& labels);
double accuracy_from_scores(const std::vector<double>& scores, const std::vector<int>& labels);
double logloss_from_scores(const std::vector<double>& scores, const std::vector<int>& labels);

double binary_kl(double p_yes, double q_yes);
// 0.5 KL(p||m) + 0.5 KL(q||m), m = (p+q)/2, natural log; range [0, ln 2].
double binary_jsd(double p_yes, double q_yes);

struct TestMetrics {
  std::optional<double> auc;
  double acc = 0;
  double logloss = 0;
};

TestMetrics auc_acc_logloss(const Model& model, const std::vector<PromptSample>& test,
                            int threads = 1);

double jsd_forget(const Model& unlearned, const Model& oracle,
                  const std::vector<PromptSample>& forget, int threads = 1);

// Buckets of cos(psi): [-1,-0.02), [-0.02,0.02], (0.02,1].
struct ConflictHistogram {
  long severe = 0, neutral = 0, aligned = 0;
  long defined() const { return severe + neutral + aligned; }
  json to_json() const;
};

ConflictHistogram conflict_histogram(const AlignmentTrace& trace);

struct MetricsReport {
  std::string method;
  std::optional<double> auc;
  double acc = 0;
  double logloss = 0;
  std::optional<double> jsd_forget;
  double unlearn_wall_seconds = 0;
  double conflict_rate = 0;  // fraction of steps with trace cos_psi below threshold
  json config_echo;

  json to_json() const;
  std::string csv_header() const;
  std::string csv_row(const std::string& run_id) const;
};

// Trains from scratch on the retained training samples with the original
// config and seed; results are cached on disk by content hash.
ModelState retrain_oracle(const ModelConfig& config, const InteractionGraph& graph,
                          const Tokenizer& tok, const PromptTemplate& tmpl,
                          const std::vector<PromptSample>& retained_train,
                          const std::vector<PromptSample>& val, const OptimizerConfig& opt,
                          std::uint64_t data_seed, const std::string& cache_dir);

}  // namespace cure
