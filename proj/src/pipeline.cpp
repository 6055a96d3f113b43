#include "cure/pipeline.hpp"

#include "cure/report.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace cure {

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("missing input file: " + path);
  json j;
  in >> j;
  return j;
}

bool stamp_matches(const std::string& path, std::uint64_t hash) {
  std::ifstream in(path);
  if (!in) return false;
  std::string s;
  std::getline(in, s);
  return s == std::to_string(hash);
}

void write_stamp(const std::string& path, std::uint64_t hash) {
  write_text(path, std::to_string(hash) + "\n");
}

std::uint64_t data_hash(const RunConfig& cfg) {
  return cfg.hash_of({"seed", "data."});
}

std::uint64_t train_hash(const RunConfig& cfg) {
  return cfg.hash_of({"seed", "threads", "data.", "model.", "train."});
}

std::uint64_t circuits_hash(const RunConfig& cfg) {
  return hash_u64(train_hash(cfg),
                  cfg.hash_of({"attribution.", "circuit.", "ppr.", "unlearn.k"}));
}

std::uint64_t unlearn_hash(const RunConfig& cfg) {
  return hash_u64(circuits_hash(cfg), cfg.hash_of({"unlearn."}));
}

void echo_config(const RunConfig& cfg, const std::string& dir) {
  write_text((fs::path(dir) / "config.effective").string(), cfg.echo());
}

}  // namespace

Workspace build_workspace(const RunConfig& cfg) {
  Workspace ws;
  if (cfg.get("data.source") == "synth") {
    ws.graph = synthesize(cfg.synth_params(), cfg.seed());
  } else {
    ws.graph = ingest_tsv(cfg.get("data.tsv_path"), cfg.get_int("data.rating_threshold"),
                          cfg.get_bool("data.tsv_has_header"));
  }
  ws.tmpl = cfg.prompt_template();
  ws.tok = Tokenizer::build(ws.tmpl, ws.graph);
  ws.split = make_split(ws.graph, ws.tok, ws.tmpl, cfg.split_ratios(),
                        cfg.get_double("data.forget_fraction"), cfg.deletion_mode(), cfg.seed());
  for (const auto* set : {&ws.split.train, &ws.split.val, &ws.split.test})
    for (const auto& s : *set)
      ws.longest_prompt = std::max(ws.longest_prompt, static_cast<int>(s.tokens.size()));
  return ws;
}

void save_workspace(const Workspace& ws, const RunConfig& cfg, const std::string& dir) {
  json j;
  j["graph"] = ws.graph.to_json();
  j["template"] = {{"text", ws.tmpl.text}, {"max_history", ws.tmpl.max_history}};
  j["manifest"] = ws.split.manifest();
  j["data_hash"] = data_hash(cfg);
  write_text((fs::path(dir) / "dataset.json").string(), j.dump(1));
}

Workspace load_workspace(const RunConfig& cfg, const std::string& dir) {
  // The split is re-derived (deterministic) and checked against the manifest.
  std::string path = (fs::path(dir) / "dataset.json").string();
  if (!fs::exists(path))
    throw ConfigError("dataset.json not found in " + dir + "; run the train command first");
  json j = read_json(path);
  if (j.value("data_hash", std::uint64_t{0}) != data_hash(cfg))
    throw ConfigError("dataset.json in " + dir + " was built from a different data config");
  Workspace ws = build_workspace(cfg);
  if (ws.split.manifest() != j.at("manifest"))
    throw ConfigError("dataset manifest mismatch; stale output directory " + dir);
  return ws;
}

TrainOutput run_train(const RunConfig& cfg) {
  cfg.validate();
  std::string dir = cfg.out_dir();
  fs::create_directories(dir);
  echo_config(cfg, dir);

  TrainOutput out;
  out.checkpoint_path = (fs::path(dir) / "m_theta.ckpt").string();
  std::string stamp = out.checkpoint_path + ".stamp";
  std::uint64_t h = train_hash(cfg);
  if (fs::exists(out.checkpoint_path) && stamp_matches(stamp, h)) {
    out.cached = true;
    return out;
  }

  Workspace ws = build_workspace(cfg);
  save_workspace(ws, cfg, dir);

  ModelConfig mc = cfg.model_config(ws.tok, ws.longest_prompt);
  TrainResult result = train_model(ModelState::init(mc), ws.graph, ws.tok, ws.tmpl,
                                   ws.split.train, ws.split.val, cfg.optimizer_config(),
                                   cfg.seed());
  save_checkpoint(result.state, out.checkpoint_path);

  json log = json::array();
  for (const auto& e : result.log) {
    json je = {{"epoch", e.epoch}, {"mean_loss", e.mean_loss}};
    if (e.val_auc) je["val_auc"] = *e.val_auc;
    log.push_back(je);
  }
  json meta;
  meta["wall_seconds"] = result.wall_seconds;
  meta["epochs"] = log;
  write_text((fs::path(dir) / "train_log.json").string(), meta.dump(1));
  write_stamp(stamp, h);
  out.wall_seconds = result.wall_seconds;
  return out;
}

namespace {

// Retain-circuit scores aggregate over the PPR-selected buffer; forget over
// the forget set.
std::vector<PromptSample> samples_for_set(const RunConfig& cfg, const Workspace& ws,
                                          const std::string& set_name,
                                          std::vector<int>* buffer_indices) {
  if (set_name == "forget") return ws.split.forget_samples();
  if (set_name != "retain") throw ConfigError("circuit set must be forget or retain");
  std::string warning;
  auto buffer = select_retain_buffer(ws.graph, ws.split.train, ws.split.forget_indices,
                                     ws.split.retain_indices, cfg.get_int("unlearn.k"),
                                     cfg.ppr_options(), &warning);
  if (buffer_indices) *buffer_indices = buffer;
  std::vector<PromptSample> out;
  out.reserve(buffer.size());
  for (int i : buffer) out.push_back(ws.split.train[i]);
  return out;
}

}  // namespace

CircuitsOutput run_circuits(const RunConfig& cfg, const std::string& set_name) {
  cfg.validate();
  std::string dir = cfg.out_dir();
  fs::create_directories(dir);

  CircuitsOutput out;
  out.circuit_path = (fs::path(dir) / ("circuit_" + set_name + ".json")).string();
  std::string stamp = out.circuit_path + ".stamp";
  std::uint64_t h = hash_str(set_name, circuits_hash(cfg));
  if (fs::exists(out.circuit_path) && stamp_matches(stamp, h)) {
    out.cached = true;
    out.circuit = Circuit::from_json(read_json(out.circuit_path));
    return out;
  }

  Workspace ws = load_workspace(cfg, dir);
  Model model(load_checkpoint((fs::path(dir) / "m_theta.ckpt").string()));

  std::vector<int> buffer_indices;
  std::vector<PromptSample> samples = samples_for_set(cfg, ws, set_name, &buffer_indices);
  if (set_name == "retain") {
    json jb;
    jb["indices"] = buffer_indices;
    write_text((fs::path(dir) / "retain_buffer.json").string(), jb.dump(1));
  }
  int max_samples = cfg.get_int("attribution.max_samples");
  if (max_samples > 0 && static_cast<int>(samples.size()) > max_samples)
    samples.resize(max_samples);
  if (samples.empty()) throw ConfigError("no samples available for circuit discovery");

  AttributionMethod method = cfg.attribution_method();
  std::vector<EdgeScoreMap> maps(samples.size());
  int failures = 0;
  json corrupt_stats = json::array();

  if (method == AttributionMethod::Intervention) {
    parallel_chunks(samples.size(), cfg.threads(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) maps[i] = score_intervention(model, samples[i]);
    });
  } else {
    ItemPprCache cache = precompute_item_vectors(
        ws.graph, cfg.ppr_options(), (fs::path(dir) / "ppr_cache.bin").string(), cfg.threads());
    CorruptParams params = cfg.corrupt_params();
    std::vector<char> ok(samples.size(), 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      try {
        std::string warning;
        CorruptCandidate cand =
            build_corrupt_sample(model, ws.graph, ws.tok, ws.tmpl, cache, samples[i], params,
                                 &warning);
        maps[i] = score_patching(model, samples[i], cand.sample);
        ok[i] = 1;
        corrupt_stats.push_back({{"sample", i},
                                 {"replaced", cand.replaced_item},
                                 {"replacement", cand.replacement_item},
                                 {"delta", cand.delta},
                                 {"candidates", cand.candidates_evaluated}});
      } catch (const AttributionError& e) {
        ++failures;
        corrupt_stats.push_back({{"sample", i}, {"error", e.what()}});
      }
    }
    std::vector<EdgeScoreMap> kept;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (ok[i]) kept.push_back(std::move(maps[i]));
    maps = std::move(kept);
    write_text((fs::path(dir) / ("corrupt_stats_" + set_name + ".json")).string(),
               corrupt_stats.dump(1));
    if (failures * 5 > static_cast<int>(samples.size()))
      throw AttributionError("corrupt-sample construction failed for more than 20% of samples");
  }
  out.corrupt_failures = failures;
  out.samples_used = static_cast<int>(maps.size());

  EdgeScoreMap agg = aggregate_scores(maps, cfg.aggregate_mode());
  int budget = budget_from_fraction(agg, cfg.get_double("circuit.fraction"));
  std::string warning;
  out.circuit = greedy_extract(model.graph(), agg, budget, &warning);
  out.circuit.validate_connectivity();

  write_text(out.circuit_path, out.circuit.to_json().dump(1));
  write_text((fs::path(dir) / ("scores_" + set_name + ".json")).string(),
             agg.to_json().dump(1));
  write_stamp(stamp, h);
  return out;
}

UnlearnOutput run_unlearn(const RunConfig& cfg) {
  cfg.validate();
  std::string dir = cfg.out_dir();
  std::string method = to_string(cfg.unlearn_method());

  UnlearnOutput out;
  out.checkpoint_path = (fs::path(dir) / ("m_un_" + method + ".ckpt")).string();
  out.trace_path = (fs::path(dir) / ("trace_" + method + ".csv")).string();
  std::string meta_path = (fs::path(dir) / ("unlearn_meta_" + method + ".json")).string();
  std::string stamp = out.checkpoint_path + ".stamp";
  std::uint64_t h = unlearn_hash(cfg);
  if (fs::exists(out.checkpoint_path) && stamp_matches(stamp, h)) {
    out.cached = true;
    json meta = read_json(meta_path);
    out.wall_seconds = meta.value("wall_seconds", 0.0);
    out.total_wall_seconds = meta.value("total_wall_seconds", 0.0);
    return out;
  }

  auto t0 = std::chrono::steady_clock::now();
  Workspace ws = load_workspace(cfg, dir);
  Model original(load_checkpoint((fs::path(dir) / "m_theta.ckpt").string()));

  // Retain buffer (shared by every method).
  std::string warning;
  auto buffer_idx = select_retain_buffer(ws.graph, ws.split.train, ws.split.forget_indices,
                                         ws.split.retain_indices, cfg.get_int("unlearn.k"),
                                         cfg.ppr_options(), &warning);
  std::vector<PromptSample> retain_buffer;
  retain_buffer.reserve(buffer_idx.size());
  for (int i : buffer_idx) retain_buffer.push_back(ws.split.train[i]);
  std::vector<PromptSample> forget = ws.split.forget_samples();

  UnlearnConfig ucfg = cfg.unlearn_config();
  UnlearnResult result;
  double discovery_seconds = 0;
  if (cfg.unlearn_method() == UnlearnMethod::Cure) {
    auto td = std::chrono::steady_clock::now();
    CircuitsOutput cf = run_circuits(cfg, "forget");
    CircuitsOutput cr = run_circuits(cfg, "retain");
    discovery_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - td).count();
    ParameterPartition part =
        partition_parameters(cf.circuit, cr.circuit, original.state());
    json jp = part.to_json();
    write_text((fs::path(dir) / "partition.json").string(), jp.dump(1));
    result = run_unlearning(original, part, forget, retain_buffer, ucfg);
  } else if (cfg.unlearn_method() == UnlearnMethod::Uniform) {
    result = baseline_uniform(original, forget, retain_buffer, ucfg);
  } else {
    result = baseline_gradient_ascent(original, forget, retain_buffer, ucfg);
  }

  save_checkpoint(result.model, out.checkpoint_path);
  result.trace.write_csv(out.trace_path);
  out.wall_seconds = result.wall_seconds;
  out.total_wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json meta;
  meta["method"] = method;
  meta["wall_seconds"] = out.wall_seconds;
  meta["circuit_discovery_seconds"] = discovery_seconds;
  meta["total_wall_seconds"] = out.total_wall_seconds;
  meta["steps"] = ucfg.steps;
  meta["retain_buffer"] = buffer_idx.size();
  write_text(meta_path, meta.dump(1));
  write_stamp(stamp, h);
  return out;
}

EvalOutput run_eval(const RunConfig& cfg) {
  cfg.validate();
  std::string dir = cfg.out_dir();
  std::string method = to_string(cfg.unlearn_method());

  Workspace ws = load_workspace(cfg, dir);
  Model unlearned(load_checkpoint((fs::path(dir) / ("m_un_" + method + ".ckpt")).string()));

  // Retrain oracle on the retained training data, same config and seed.
  ModelConfig mc = cfg.model_config(ws.tok, ws.longest_prompt);
  ModelState oracle_state = retrain_oracle(mc, ws.graph, ws.tok, ws.tmpl,
                                           ws.split.retain_samples(), ws.split.val,
                                           cfg.optimizer_config(), cfg.seed(),
                                           (fs::path(dir) / "cache").string());
  Model oracle(std::move(oracle_state));

  MetricsReport report;
  report.method = method;
  TestMetrics tm = auc_acc_logloss(unlearned, ws.split.test, cfg.threads());
  report.auc = tm.auc;
  report.acc = tm.acc;
  report.logloss = tm.logloss;
  report.jsd_forget = jsd_forget(unlearned, oracle, ws.split.forget_samples(), cfg.threads());

  std::string meta_path = (fs::path(dir) / ("unlearn_meta_" + method + ".json")).string();
  if (fs::exists(meta_path)) {
    json meta = read_json(meta_path);
    report.unlearn_wall_seconds = meta.value("total_wall_seconds", 0.0);
  }
  std::string trace_path = (fs::path(dir) / ("trace_" + method + ".csv")).string();
  if (fs::exists(trace_path)) {
    AlignmentTrace trace = AlignmentTrace::read_csv(trace_path);
    long defined = 0, conflicted = 0;
    for (const auto& r : trace.rows) {
      if (!r.cos_psi) continue;
      ++defined;
      conflicted += *r.cos_psi < cfg.get_double("unlearn.conflict_threshold");
    }
    report.conflict_rate =
        defined > 0 ? static_cast<double>(conflicted) / static_cast<double>(defined) : 0.0;
  }
  report.config_echo = json::object();
  report.config_echo["seed"] = cfg.seed();
  report.config_echo["omega_r"] = cfg.get_double("unlearn.omega_r");
  report.config_echo["method"] = method;
  report.config_echo["attribution"] = cfg.get("attribution.method");
  report.config_echo["circuit_fraction"] = cfg.get_double("circuit.fraction");

  EvalOutput out;
  out.report = report;
  out.metrics_path = (fs::path(dir) / ("metrics_" + method + ".json")).string();
  write_text(out.metrics_path, report.to_json().dump(1));

  // one-row append for cross-run comparison
  std::string runs_csv = (fs::path(dir) / "runs.csv").string();
  bool fresh = !fs::exists(runs_csv);
  std::ofstream app(runs_csv, std::ios::app);
  if (fresh) app << report.csv_header() << "\n";
  app << report.csv_row(fs::path(dir).filename().string()) << "\n";
  return out;
}

void run_report(const RunConfig& cfg) {
  write_run_report(cfg.out_dir());
}

}  // namespace cure
