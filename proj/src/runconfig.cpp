#include "cure/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace cure {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      {"seed", "7"},
      {"threads", "1"},
      {"out", "runs/out"},
      {"data.source", "synth"},
      {"data.tsv_path", ""},
      {"data.tsv_has_header", "false"},
      {"data.rating_threshold", "3"},
      {"data.users", "200"},
      {"data.items", "150"},
      {"data.clusters", "3"},
      {"data.mean_degree", "8"},
      {"data.ratio_train", "0.7"},
      {"data.ratio_val", "0.2"},
      {"data.ratio_test", "0.1"},
      {"data.forget_fraction", "0.2"},
      {"data.deletion_mode", "interaction"},
      {"data.max_history", "10"},
      {"model.layers", "2"},
      {"model.heads", "4"},
      {"model.width", "64"},
      {"model.mlp_width", "256"},
      {"model.init_scale", "0.02"},
      {"model.full_vocab_delta", "false"},
      {"train.lr", "1e-3"},
      {"train.epochs", "15"},
      {"train.batch", "32"},
      {"train.weight_decay", "0.01"},
      {"train.negatives_per_positive", "1"},
      {"attribution.method", "intervention"},
      {"attribution.aggregate", "mean"},
      {"attribution.max_samples", "0"},
      {"circuit.fraction", "0.05"},
      {"ppr.alpha", "0.85"},
      {"ppr.eps", "1e-6"},
      {"ppr.tau", "1.0"},
      {"ppr.swap_alpha", "false"},
      {"unlearn.method", "cure"},
      {"unlearn.omega_r", "0.6"},
      {"unlearn.lr", "5e-5"},
      {"unlearn.steps", "200"},
      {"unlearn.batch", "32"},
      {"unlearn.k", "6"},
      {"unlearn.conflict_threshold", "-0.02"},
      {"unlearn.normalize_shared", "true"},
      {"unlearn.optimizer", "adamw"},
  };
}

RunConfig RunConfig::from_file(const std::string& path) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not key = value");
    cfg.apply_override(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

std::string RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + " expects a boolean, got: " + v);
}

int RunConfig::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an integer, got: " + get(key));
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects a number, got: " + get(key));
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an unsigned integer, got: " + get(key));
  }
}

void RunConfig::validate() const {
  std::string source = get("data.source");
  if (source != "synth" && source != "tsv")
    throw ConfigError("data.source must be synth or tsv");
  if (source == "tsv" && get("data.tsv_path").empty())
    throw ConfigError("data.tsv_path is required when data.source = tsv");
  double rsum = get_double("data.ratio_train") + get_double("data.ratio_val") +
                get_double("data.ratio_test");
  if (std::abs(rsum - 1.0) > 1e-9) throw ConfigError("data.ratio_* must sum to 1");
  double ff = get_double("data.forget_fraction");
  if (ff <= 0.0 || ff >= 1.0) throw ConfigError("data.forget_fraction must lie in (0,1)");
  deletion_mode();
  attribution_method();
  aggregate_mode();
  unlearn_method();
  double frac = get_double("circuit.fraction");
  if (frac <= 0.0 || frac > 1.0) throw ConfigError("circuit.fraction must lie in (0,1]");
  double alpha = get_double("ppr.alpha");
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("ppr.alpha must lie in (0,1)");
  if (get_double("ppr.eps") <= 0.0) throw ConfigError("ppr.eps must be positive");
  unlearn_config().validate();
  std::string opt = get("unlearn.optimizer");
  if (opt != "adamw" && opt != "sgd")
    throw ConfigError("unlearn.optimizer must be adamw or sgd");
  if (get_int("threads") < 1) throw ConfigError("threads must be >= 1");
  if (get_int("data.max_history") < 1) throw ConfigError("data.max_history must be >= 1");
}

SynthParams RunConfig::synth_params() const {
  SynthParams p;
  p.num_users = get_int("data.users");
  p.num_items = get_int("data.items");
  p.clusters = get_int("data.clusters");
  p.mean_degree = get_int("data.mean_degree");
  return p;
}

PromptTemplate RunConfig::prompt_template() const {
  PromptTemplate t;
  t.max_history = get_int("data.max_history");
  return t;
}

SplitRatios RunConfig::split_ratios() const {
  return {get_double("data.ratio_train"), get_double("data.ratio_val"),
          get_double("data.ratio_test")};
}

DeletionMode RunConfig::deletion_mode() const {
  return deletion_mode_from_string(get("data.deletion_mode"));
}

ModelConfig RunConfig::model_config(const Tokenizer& tok, int longest_prompt) const {
  ModelConfig c;
  c.layers = get_int("model.layers");
  c.heads = get_int("model.heads");
  c.width = get_int("model.width");
  c.mlp_width = get_int("model.mlp_width");
  c.vocab = tok.size();
  c.max_seq = longest_prompt;
  c.yes_token = tok.yes_id;
  c.no_token = tok.no_id;
  c.seed = seed();
  c.init_scale = get_double("model.init_scale");
  c.full_vocab_delta = get_bool("model.full_vocab_delta");
  return c;
}

OptimizerConfig RunConfig::optimizer_config() const {
  OptimizerConfig o;
  o.lr = get_double("train.lr");
  o.epochs = get_int("train.epochs");
  o.batch_size = get_int("train.batch");
  o.weight_decay = get_double("train.weight_decay");
  o.negatives_per_positive = get_int("train.negatives_per_positive");
  o.threads = threads();
  return o;
}

UnlearnConfig RunConfig::unlearn_config() const {
  UnlearnConfig u;
  u.omega_r = get_double("unlearn.omega_r");
  u.lr = get_double("unlearn.lr");
  u.steps = get_int("unlearn.steps");
  u.batch_size = get_int("unlearn.batch");
  u.retain_multiplier = get_int("unlearn.k");
  u.conflict_threshold = get_double("unlearn.conflict_threshold");
  u.normalize_shared = get_bool("unlearn.normalize_shared");
  u.use_adamw = get("unlearn.optimizer") == "adamw";
  u.seed = seed();
  u.threads = threads();
  return u;
}

PprOptions RunConfig::ppr_options() const {
  PprOptions p;
  p.alpha = get_double("ppr.alpha");
  p.eps = get_double("ppr.eps");
  p.swap_alpha_role = get_bool("ppr.swap_alpha");
  return p;
}

AttributionMethod RunConfig::attribution_method() const {
  return attribution_method_from_string(get("attribution.method"));
}

AggregateMode RunConfig::aggregate_mode() const {
  std::string m = get("attribution.aggregate");
  if (m == "mean") return AggregateMode::Mean;
  if (m == "max") return AggregateMode::Max;
  throw ConfigError("attribution.aggregate must be mean or max");
}

UnlearnMethod RunConfig::unlearn_method() const {
  return unlearn_method_from_string(get("unlearn.method"));
}

CorruptParams RunConfig::corrupt_params() const {
  CorruptParams c;
  c.tau = get_double("ppr.tau");
  return c;
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

std::uint64_t RunConfig::hash_of(const std::vector<std::string>& prefixes) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [k, v] : values_) {
    bool keep = false;
    for (const auto& p : prefixes)
      if (k.rfind(p, 0) == 0) keep = true;
    if (!keep) continue;
    h = hash_str(k, h);
    h = hash_str(v, h);
  }
  return h;
}

}  // namespace cure
