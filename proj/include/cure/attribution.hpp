#pragma once
// First-order edge scoring on the model's computational DAG: zero-ablation
// estimates and corrupt-sample contrast estimates, plus per-set aggregation.

#include "cure/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace cure {

enum class AttributionMethod { Intervention, Patching };

std::string to_string(AttributionMethod m);
AttributionMethod attribution_method_from_string(const std::string& s);

struct EdgeScoreMap {
  AttributionMethod method = AttributionMethod::Intervention;
  int samples = 1;
  std::map<std::string, double> score;         // |first-order estimate|, >= 0
  std::map<std::string, double> signed_score;  // diagnostics only

  json to_json() const;
  static EdgeScoreMap from_json(const json& j);
  double gini() const;  // concentration of scores across edges
};

// I(e) = | m_{v1->v2}^T dDelta/dv2 | from one recorded forward and one backward.
EdgeScoreMap score_intervention(const Model& model, const PromptSample& sample);

// I(e) = | (m*_{v1->v2} - m_{v1->v2})^T dDelta/dv2 |; corrupt messages come from
// a clean forward on the corrupt sample, gradients from the original sample.
EdgeScoreMap score_patching(const Model& model, const PromptSample& sample,
                            const PromptSample& corrupt);

enum class AggregateMode { Mean, Max };

EdgeScoreMap aggregate_scores(const std::vector<EdgeScoreMap>& maps,
                              AggregateMode mode = AggregateMode::Mean);

}  // namespace cure
