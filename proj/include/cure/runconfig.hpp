#pragma once
// Declarative run configuration: a flat key-value file with dotted sections,
// overridable by CLI flags. Unknown keys are rejected; the effective config is
// echoed into the output directory.

#include "cure/attribution.hpp"
#include "cure/interactions.hpp"
#include "cure/model.hpp"
#include "cure/ppr.hpp"
#include "cure/trainer.hpp"
#include "cure/unlearn.hpp"

#include <map>
#include <string>

namespace cure {

class RunConfig {
 public:
  RunConfig();  // defaults

  static RunConfig from_file(const std::string& path);
  void apply_override(const std::string& key, const std::string& value);
  void validate() const;

  std::string get(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  std::uint64_t seed() const { return get_u64("seed"); }
  int threads() const { return get_int("threads"); }
  std::string out_dir() const { return get("out"); }

  SynthParams synth_params() const;
  PromptTemplate prompt_template() const;
  SplitRatios split_ratios() const;
  DeletionMode deletion_mode() const;
  // vocab / max_seq / answer ids come from the realized dataset
  ModelConfig model_config(const Tokenizer& tok, int longest_prompt) const;
  OptimizerConfig optimizer_config() const;
  UnlearnConfig unlearn_config() const;
  PprOptions ppr_options() const;
  AttributionMethod attribution_method() const;
  AggregateMode aggregate_mode() const;
  UnlearnMethod unlearn_method() const;
  CorruptParams corrupt_params() const;

  std::string echo() const;  // sorted key=value lines
  std::uint64_t hash_of(const std::vector<std::string>& prefixes) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cure
