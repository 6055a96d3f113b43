#pragma once
// Mini-batch training with decoupled weight decay, plus the optimizer core
// reused by the unlearning loop.

#include "cure/interactions.hpp"
#include "cure/model.hpp"

#include <optional>
#include <vector>

namespace cure {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 32;
  int epochs = 12;
  int negatives_per_positive = 1;  // extra "No" samples drawn per positive sample
  int threads = 1;

  json to_json() const;
};

// AdamW over a flat parameter vector.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  Vec m, v;
  long t = 0;

  void init(long dim) {
    m = Vec::Zero(dim);
    v = Vec::Zero(dim);
    t = 0;
  }
  // Returns the update to subtract from the parameters (lr already applied).
  Vec step(const Vec& grad, const Vec& params, double lr);
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  std::optional<double> val_auc;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochLog> log;
  double wall_seconds = 0;
};

// Trains on `train` (negatives are drawn on the fly per positive sample, keyed
// by data_seed), logging validation AUC per epoch. Aborts with
// TrainingDivergence on non-finite loss.
TrainResult train_model(const ModelState& init, const InteractionGraph& graph,
                        const Tokenizer& tok, const PromptTemplate& tmpl,
                        const std::vector<PromptSample>& train,
                        const std::vector<PromptSample>& val, const OptimizerConfig& opt,
                        std::uint64_t data_seed);

// Mean NLL and summed parameter gradients over a batch; deterministic ordered
// reduction even when threaded.
double batch_nll_grads(const Model& model, const std::vector<const PromptSample*>& batch,
                       GradMap* grads, int threads);

}  // namespace cure
