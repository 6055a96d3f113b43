#include "cure/trainer.hpp"

#include "cure/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace cure {

json OptimizerConfig::to_json() const {
  json j;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["negatives_per_positive"] = negatives_per_positive;
  return j;
}

Vec AdamW::step(const Vec& grad, const Vec& params, double lr) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  Vec mhat = m / bc1;
  Vec vhat = v / bc2;
  Vec update = lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
  if (weight_decay > 0.0) update += lr * weight_decay * params;
  return update;
}

double batch_nll_grads(const Model& model, const std::vector<const PromptSample*>& batch,
                       GradMap* grads, int threads) {
  const std::size_t n = batch.size();
  if (n == 0) return 0.0;
  if (threads <= 1 || n < 4) {
    double total = 0;
    for (const auto* s : batch) total += model.nll(*s, grads);
    return total / static_cast<double>(n);
  }
  int workers = std::min<int>(threads, static_cast<int>(n));
  std::vector<double> partial_loss(workers, 0.0);
  std::vector<GradMap> partial_grads;
  if (grads)
    for (int w = 0; w < workers; ++w) partial_grads.push_back(GradMap::zeros_like(model.state()));
  std::size_t chunk = (n + workers - 1) / workers;
  parallel_chunks(n, workers, [&](std::size_t lo, std::size_t hi) {
    int w = static_cast<int>(lo / chunk);
    for (std::size_t i = lo; i < hi; ++i)
      partial_loss[w] += model.nll(*batch[i], grads ? &partial_grads[w] : nullptr);
  });
  double total = std::accumulate(partial_loss.begin(), partial_loss.end(), 0.0);
  if (grads)
    for (int w = 0; w < workers; ++w) grads->accumulate(partial_grads[w]);
  return total / static_cast<double>(n);
}

namespace {

// Flatten all parameters into one vector for the optimizer, then scatter back.
Vec flatten_params(const ModelState& s, const std::vector<std::string>& keys) {
  long total = 0;
  for (const auto& k : keys) total += s.params.at(k).size();
  Vec v(total);
  long at = 0;
  for (const auto& k : keys) {
    const Mat& m = s.params.at(k);
    std::copy(m.data(), m.data() + m.size(), v.data() + at);
    at += m.size();
  }
  return v;
}

void scatter_params(ModelState& s, const std::vector<std::string>& keys, const Vec& v) {
  long at = 0;
  for (const auto& k : keys) {
    Mat& m = s.params.at(k);
    std::copy(v.data() + at, v.data() + at + m.size(), m.data());
    at += m.size();
  }
}

}  // namespace

TrainResult train_model(const ModelState& init, const InteractionGraph& graph,
                        const Tokenizer& tok, const PromptTemplate& tmpl,
                        const std::vector<PromptSample>& train,
                        const std::vector<PromptSample>& val, const OptimizerConfig& opt,
                        std::uint64_t data_seed) {
  auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  result.state = init;
  if (opt.epochs == 0 || train.empty()) {
    result.wall_seconds = 0;
    return result;
  }

  Model model(result.state);
  auto keys = model.state().parameter_keys();
  AdamW adam;
  adam.beta1 = opt.beta1;
  adam.beta2 = opt.beta2;
  adam.eps = opt.eps;
  adam.weight_decay = opt.weight_decay;
  Vec theta = flatten_params(model.state(), keys);
  adam.init(theta.size());

  NegativeSampler negs = NegativeSampler::build(graph);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng(hash_u64(data_seed, hash_u64(static_cast<std::uint64_t>(epoch))));
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    // Epoch stream: every split sample, plus freshly drawn negatives after
    // each positive one. Reserve up front: `stream` holds pointers into `drawn`.
    std::size_t n_pos = 0;
    for (const auto& s : train) n_pos += s.answer == 1;
    std::vector<PromptSample> drawn;
    drawn.reserve(n_pos * std::max(0, opt.negatives_per_positive));
    std::vector<const PromptSample*> stream;
    for (int idx : order) {
      const PromptSample& s = train[idx];
      stream.push_back(&s);
      if (s.answer == 1) {
        for (int k = 0; k < opt.negatives_per_positive; ++k) {
          auto item = negs.draw(s.user, rng);
          if (!item) continue;
          drawn.push_back(render_prompt(graph, tok, tmpl, s.user, s.history, *item, 0));
          stream.push_back(&drawn.back());
        }
      }
    }

    double loss_sum = 0;
    long batches = 0;
    for (std::size_t at = 0; at < stream.size(); at += opt.batch_size) {
      std::size_t hi = std::min(stream.size(), at + opt.batch_size);
      std::vector<const PromptSample*> batch(stream.begin() + at, stream.begin() + hi);
      GradMap grads = GradMap::zeros_like(model.state());
      double loss = batch_nll_grads(model, batch, &grads, opt.threads);
      if (!std::isfinite(loss) || !grads.all_finite())
        throw TrainingDivergence("non-finite loss or gradient at epoch " +
                                 std::to_string(epoch));
      grads.scale(1.0 / static_cast<double>(batch.size()));
      Vec g = grads.flatten(keys);
      theta -= adam.step(g, theta, opt.lr);
      scatter_params(model.mutable_state(), keys, theta);
      loss_sum += loss;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    if (!val.empty()) {
      TestMetrics m = auc_acc_logloss(model, val, opt.threads);
      log.val_auc = m.auc;
    }
    result.log.push_back(log);
  }

  result.state = model.state();
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace cure
