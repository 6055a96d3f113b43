#include "cure/attribution.hpp"

#include <algorithm>
#include <cmath>

namespace cure {

std::string to_string(AttributionMethod m) {
  return m == AttributionMethod::Intervention ? "intervention" : "patching";
}

AttributionMethod attribution_method_from_string(const std::string& s) {
  if (s == "intervention") return AttributionMethod::Intervention;
  if (s == "patching") return AttributionMethod::Patching;
  throw ConfigError("unknown attribution method: " + s);
}

json EdgeScoreMap::to_json() const {
  json j;
  j["method"] = to_string(method);
  j["samples"] = samples;
  json s = json::object();
  for (const auto& [k, v] : score) s[k] = v;
  j["scores"] = s;
  json ss = json::object();
  for (const auto& [k, v] : signed_score) ss[k] = v;
  j["signed_scores"] = ss;
  return j;
}

EdgeScoreMap EdgeScoreMap::from_json(const json& j) {
  EdgeScoreMap m;
  m.method = attribution_method_from_string(j.at("method").get<std::string>());
  m.samples = j.at("samples").get<int>();
  for (const auto& [k, v] : j.at("scores").items()) m.score[k] = v.get<double>();
  for (const auto& [k, v] : j.at("signed_scores").items()) m.signed_score[k] = v.get<double>();
  return m;
}

double EdgeScoreMap::gini() const {
  std::vector<double> xs;
  xs.reserve(score.size());
  for (const auto& [k, v] : score) xs.push_back(v);
  std::sort(xs.begin(), xs.end());
  double n = static_cast<double>(xs.size());
  double sum = 0, weighted = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sum += xs[i];
    weighted += (static_cast<double>(i) + 1.0) * xs[i];
  }
  if (sum <= 0) return 0.0;
  return (2.0 * weighted) / (n * sum) - (n + 1.0) / n;
}

namespace {

void check_finite(const std::string& node, const Vec& g) {
  if (!g.allFinite()) throw AttributionError("non-finite gradient at node " + node);
}

}  // namespace

EdgeScoreMap score_intervention(const Model& model, const PromptSample& sample) {
  ForwardRecord rec = model.forward(sample, RecordLevel::MessagesAndGrads);
  EdgeScoreMap out;
  out.method = AttributionMethod::Intervention;
  for (const auto& e : model.graph().edges) {
    const Vec& m = rec.node_output.at(e.from.key());
    const Vec& g = rec.node_input_grad.at(e.to.key());
    check_finite(e.to.key(), g);
    double s = m.dot(g);
    out.signed_score[e.key()] = s;
    out.score[e.key()] = std::abs(s);
  }
  return out;
}

EdgeScoreMap score_patching(const Model& model, const PromptSample& sample,
                            const PromptSample& corrupt) {
  if (sample.tokens.size() != corrupt.tokens.size())
    throw AttributionError("patching requires positional alignment: token length mismatch");
  ForwardRecord clean = model.forward(sample, RecordLevel::MessagesAndGrads);
  ForwardRecord dirty = model.forward(corrupt, RecordLevel::Messages);
  EdgeScoreMap out;
  out.method = AttributionMethod::Patching;
  for (const auto& e : model.graph().edges) {
    const Vec& m = clean.node_output.at(e.from.key());
    const Vec& m_star = dirty.node_output.at(e.from.key());
    const Vec& g = clean.node_input_grad.at(e.to.key());
    check_finite(e.to.key(), g);
    double s = (m_star - m).dot(g);
    out.signed_score[e.key()] = s;
    out.score[e.key()] = std::abs(s);
  }
  return out;
}

EdgeScoreMap aggregate_scores(const std::vector<EdgeScoreMap>& maps, AggregateMode mode) {
  if (maps.empty()) throw AttributionError("cannot aggregate an empty score set");
  EdgeScoreMap out;
  out.method = maps.front().method;
  out.samples = 0;
  for (const auto& m : maps) {
    if (m.method != out.method)
      throw AttributionError("cannot aggregate score maps with mixed methods");
    if (m.score.size() != maps.front().score.size())
      throw AttributionError("cannot aggregate score maps over different edge sets");
    out.samples += m.samples;
  }
  for (const auto& [key, v0] : maps.front().score) {
    double acc = 0, signed_acc = 0;
    for (const auto& m : maps) {
      double v = m.score.at(key);
      acc = mode == AggregateMode::Mean ? acc + v : std::max(acc, v);
      signed_acc += m.signed_score.at(key);
    }
    out.score[key] = mode == AggregateMode::Mean ? acc / static_cast<double>(maps.size()) : acc;
    out.signed_score[key] = signed_acc / static_cast<double>(maps.size());
  }
  return out;
}

}  // namespace cure
