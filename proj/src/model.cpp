#include "cure/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cure {

namespace {

constexpr double kRmsEps = 1e-8;
constexpr char kCheckpointMagic[9] = "CURECKPT";

double rms_of(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return std::sqrt(x.squaredNorm() / static_cast<double>(x.size()) + kRmsEps);
}

Eigen::RowVectorXd rmsnorm_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return x / rms_of(x);
}

Mat rmsnorm_rows(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) y.row(i) = x.row(i) / rms_of(x.row(i));
  return y;
}

// dx for y = x / rms(x): dx = dy/r - x * (x.dy) / (n r^3)
Eigen::RowVectorXd rmsnorm_backward_row(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                        const Eigen::Ref<const Eigen::RowVectorXd>& dy) {
  double r = rms_of(x);
  double dot = x.dot(dy);
  double n = static_cast<double>(x.size());
  return dy / r - x * (dot / (n * r * r * r));
}

Mat rmsnorm_backward_rows(const Mat& x, const Mat& dy) {
  Mat dx(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) dx.row(i) = rmsnorm_backward_row(x.row(i), dy.row(i));
  return dx;
}

const double kGeluC = std::sqrt(2.0 / M_PI);

double gelu(double x) {
  double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  double u = kGeluC * (x + 0.044715 * x * x * x);
  double t = std::tanh(u);
  double sech2 = 1.0 - t * t;
  return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

void two_way_softmax(double z_yes, double z_no, double* p_yes, double* p_no) {
  double m = std::max(z_yes, z_no);
  double ey = std::exp(z_yes - m), en = std::exp(z_no - m);
  *p_yes = ey / (ey + en);
  *p_no = en / (ey + en);
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || width < 1 || mlp_width < 1)
    throw ConfigError("model dimensions must be positive");
  if (width % heads != 0) throw ConfigError("model width must be divisible by head count");
  if (vocab < 2) throw ConfigError("vocabulary must contain at least the two answer tokens");
  if (max_seq < 1) throw ConfigError("max sequence length must be positive");
  if (yes_token < 0 || yes_token >= vocab || no_token < 0 || no_token >= vocab ||
      yes_token == no_token)
    throw ConfigError("answer token ids must be distinct and inside the vocabulary");
}

json ModelConfig::to_json() const {
  json j;
  j["layers"] = layers;
  j["heads"] = heads;
  j["width"] = width;
  j["mlp_width"] = mlp_width;
  j["vocab"] = vocab;
  j["max_seq"] = max_seq;
  j["yes_token"] = yes_token;
  j["no_token"] = no_token;
  j["seed"] = seed;
  j["init_scale"] = init_scale;
  j["full_vocab_delta"] = full_vocab_delta;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.width = j.at("width").get<int>();
  c.mlp_width = j.at("mlp_width").get<int>();
  c.vocab = j.at("vocab").get<int>();
  c.max_seq = j.at("max_seq").get<int>();
  c.yes_token = j.at("yes_token").get<int>();
  c.no_token = j.at("no_token").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.init_scale = j.at("init_scale").get<double>();
  c.full_vocab_delta = j.at("full_vocab_delta").get<bool>();
  return c;
}

std::string NodeRef::key() const {
  switch (kind) {
    case Kind::Input: return "input";
    case Kind::Logits: return "logits";
    case Kind::Head: return "L" + std::to_string(layer) + ".h" + std::to_string(index);
    case Kind::Mlp: return "L" + std::to_string(layer) + ".mlp";
  }
  return "?";
}

std::string edge_key(const std::string& from, const std::string& to) {
  return from + "→" + to;
}

std::string DagEdge::key() const { return edge_key(from.key(), to.key()); }

ComputationGraph ComputationGraph::build(const ModelConfig& config) {
  ComputationGraph g;
  std::vector<int> group_of;  // parallel nodes share a group id
  int group = 0;
  g.nodes.push_back({NodeRef::Kind::Input, -1, -1});
  group_of.push_back(group++);
  for (int l = 0; l < config.layers; ++l) {
    for (int h = 0; h < config.heads; ++h) {
      g.nodes.push_back({NodeRef::Kind::Head, l, h});
      group_of.push_back(group);
    }
    ++group;
    g.nodes.push_back({NodeRef::Kind::Mlp, l, -1});
    group_of.push_back(group++);
  }
  g.nodes.push_back({NodeRef::Kind::Logits, -1, -1});
  group_of.push_back(group++);

  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < g.nodes.size(); ++j) {
      if (group_of[i] == group_of[j]) continue;
      g.edges.push_back({g.nodes[i], g.nodes[j]});
    }
  }
  for (const auto& e : g.edges) {
    g.upstream_[e.to.key()].push_back(e.from.key());
    g.edge_keys_.insert(e.key());
  }
  return g;
}

const std::vector<std::string>& ComputationGraph::upstream_of(const std::string& node_key) const {
  static const std::vector<std::string> empty;
  auto it = upstream_.find(node_key);
  return it == upstream_.end() ? empty : it->second;
}

bool ComputationGraph::has_edge(const std::string& key) const { return edge_keys_.count(key) > 0; }

std::vector<std::string> node_parameter_keys(const NodeRef& node) {
  std::string k = node.key();
  if (node.kind == NodeRef::Kind::Head) return {k + ".wq", k + ".wk", k + ".wv", k + ".wo"};
  if (node.kind == NodeRef::Kind::Mlp)
    return {k + ".w_in", k + ".b_in", k + ".w_out", k + ".b_out"};
  return {};
}

ModelState ModelState::init(const ModelConfig& config) {
  config.validate();
  ModelState s;
  s.config = config;
  int d = config.width, dh = config.head_dim(), dm = config.mlp_width;

  s.params["emb.tok"] = Mat::Zero(config.vocab, d);
  s.params["emb.pos"] = Mat::Zero(config.max_seq, d);
  s.params["unembed"] = Mat::Zero(d, config.vocab);
  for (int l = 0; l < config.layers; ++l) {
    for (int h = 0; h < config.heads; ++h) {
      std::string p = "L" + std::to_string(l) + ".h" + std::to_string(h) + ".";
      s.params[p + "wq"] = Mat::Zero(d, dh);
      s.params[p + "wk"] = Mat::Zero(d, dh);
      s.params[p + "wv"] = Mat::Zero(d, dh);
      s.params[p + "wo"] = Mat::Zero(dh, d);
    }
    std::string p = "L" + std::to_string(l) + ".mlp.";
    s.params[p + "w_in"] = Mat::Zero(d, dm);
    s.params[p + "b_in"] = Mat::Zero(1, dm);
    s.params[p + "w_out"] = Mat::Zero(dm, d);
    s.params[p + "b_out"] = Mat::Zero(1, d);
  }

  // Biases stay zero; everything else is gaussian. Filling in key order keeps
  // initialization deterministic for a given seed.
  Rng rng(config.seed);
  for (auto& [key, mat] : s.params) {
    if (key.ends_with("b_in") || key.ends_with("b_out")) continue;
    for (int r = 0; r < mat.rows(); ++r)
      for (int c = 0; c < mat.cols(); ++c) mat(r, c) = config.init_scale * draw_normal(rng);
  }
  return s;
}

std::uint64_t ModelState::content_hash() const {
  std::uint64_t h = hash_str(config.to_json().dump());
  for (const auto& [key, mat] : params) {
    h = hash_str(key, h);
    h = fnv1a(mat.data(), sizeof(double) * mat.size(), h);
  }
  return h;
}

std::vector<std::string> ModelState::parameter_keys() const {
  std::vector<std::string> keys;
  keys.reserve(params.size());
  for (const auto& [key, mat] : params) keys.push_back(key);
  return keys;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
  json header;
  header["config"] = state.config.to_json();
  header["format"] = "f64-rowmajor-le";
  json tensors = json::array();
  for (const auto& [key, mat] : state.params) {
    tensors.push_back({{"name", key}, {"rows", mat.rows()}, {"cols", mat.cols()}});
  }
  header["tensors"] = tensors;
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 8);
  std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [key, mat] : state.params) {
    out.write(reinterpret_cast<const char*>(mat.data()),
              static_cast<std::streamsize>(sizeof(double) * mat.size()));
  }
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("truncated checkpoint header: " + path);
  json header = json::parse(hs);

  ModelState s;
  s.config = ModelConfig::from_json(header.at("config"));
  for (const auto& t : header.at("tensors")) {
    Mat m(t.at("rows").get<int>(), t.at("cols").get<int>());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw ParseError("truncated checkpoint data: " + path);
    s.params[t.at("name").get<std::string>()] = std::move(m);
  }

  auto expected = ModelState::init(s.config).parameter_keys();
  if (s.parameter_keys() != expected)
    throw ParseError("checkpoint parameter set does not match its config: " + path);
  return s;
}

GradMap GradMap::zeros_like(const ModelState& state) {
  GradMap m;
  for (const auto& [key, mat] : state.params) m.g[key] = Mat::Zero(mat.rows(), mat.cols());
  return m;
}

void GradMap::accumulate(const GradMap& other) {
  for (const auto& [key, mat] : other.g) {
    auto it = g.find(key);
    if (it == g.end())
      g[key] = mat;
    else
      it->second += mat;
  }
}

void GradMap::scale(double s) {
  for (auto& [key, mat] : g) mat *= s;
}

Vec GradMap::flatten(const std::vector<std::string>& keys) const {
  long total = 0;
  for (const auto& k : keys) total += g.at(k).size();
  Vec v(total);
  long at = 0;
  for (const auto& k : keys) {
    const Mat& m = g.at(k);
    std::memcpy(v.data() + at, m.data(), sizeof(double) * m.size());
    at += m.size();
  }
  return v;
}

bool GradMap::all_finite() const {
  for (const auto& [key, mat] : g)
    if (!mat.allFinite()) return false;
  return true;
}

// ---------------------------------------------------------------------------

struct Model::Activations {
  int T = 0, ans = 0;
  bool patched = false;
  std::vector<int> tokens;
  Mat emb;

  struct HeadCache {
    Mat q, k, v, att, ctx;
  };
  struct MlpCache {
    Mat xn, pre, hid;
  };

  std::vector<Mat> stream_heads;  // per layer: stream read by that layer's heads
  std::vector<Mat> xn_heads;      // rmsnorm of the above (shared by the heads)
  std::vector<std::vector<HeadCache>> heads;
  std::vector<Mat> stream_mlp;  // per layer: stream read by the MLP
  std::vector<MlpCache> mlps;
  Mat stream_final;

  Vec final_norm;  // rmsnorm of the logits-node input row
  Vec logits;
  double z_yes = 0, z_no = 0, p_yes = 0, p_no = 0, delta = 0;

  std::map<std::string, Vec> node_out_ans;  // output of every node at the answer position
  std::map<std::string, Vec> node_in_ans;   // input each node read at the answer position
};

Model::Model(ModelState state)
    : state_(std::move(state)), graph_(ComputationGraph::build(state_.config)) {}

void Model::run_forward(const PromptSample& sample, const EdgePatch* patch,
                        Activations& acts) const {
  forward_count_.fetch_add(1, std::memory_order_relaxed);
  const auto& cfg = state_.config;
  const int T = static_cast<int>(sample.tokens.size());
  if (T < 1) throw ParseError("empty token sequence");
  if (T > cfg.max_seq)
    throw ParseError("sequence length " + std::to_string(T) + " exceeds max_seq " +
                     std::to_string(cfg.max_seq));
  for (int t : sample.tokens)
    if (t < 0 || t >= cfg.vocab) throw ParseError("token id out of vocabulary range");

  // patched edges grouped by target node
  std::map<std::string, std::map<std::string, Vec>> patch_by_target;
  if (patch) {
    for (const auto& [ekey, msg] : patch->replace) {
      if (!graph_.has_edge(ekey)) throw ParseError("unknown edge in patch: " + ekey);
      if (msg.size() != cfg.width) throw ParseError("patch message has wrong width: " + ekey);
      auto arrow = ekey.find("→");
      std::string from = ekey.substr(0, arrow);
      std::string to = ekey.substr(arrow + std::strlen("→"));
      patch_by_target[to][from] = msg;
      acts.patched = true;
    }
  }

  // Input row of `node` at the answer position: sum of upstream messages with
  // patched edges replaced. Only evaluated for patched nodes.
  auto patched_input_row = [&](const std::string& node) -> Eigen::RowVectorXd {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(cfg.width);
    const auto& repl = patch_by_target.at(node);
    for (const auto& up : graph_.upstream_of(node)) {
      auto it = repl.find(up);
      if (it != repl.end())
        row += it->second.transpose();
      else
        row += acts.node_out_ans.at(up).transpose();
    }
    return row;
  };

  acts.T = T;
  acts.ans = T - 1;
  acts.tokens = sample.tokens;

  const int d = cfg.width, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  acts.emb.resize(T, d);
  const Mat& tok_emb = state_.params.at("emb.tok");
  const Mat& pos_emb = state_.params.at("emb.pos");
  for (int t = 0; t < T; ++t) acts.emb.row(t) = tok_emb.row(sample.tokens[t]) + pos_emb.row(t);
  acts.node_out_ans["input"] = acts.emb.row(acts.ans).transpose();

  Mat stream = acts.emb;
  acts.stream_heads.resize(cfg.layers);
  acts.xn_heads.resize(cfg.layers);
  acts.heads.assign(cfg.layers, std::vector<Activations::HeadCache>(cfg.heads));
  acts.stream_mlp.resize(cfg.layers);
  acts.mlps.resize(cfg.layers);

  for (int l = 0; l < cfg.layers; ++l) {
    acts.stream_heads[l] = stream;
    acts.xn_heads[l] = rmsnorm_rows(stream);

    Mat head_sum = Mat::Zero(T, d);
    for (int h = 0; h < cfg.heads; ++h) {
      std::string node = "L" + std::to_string(l) + ".h" + std::to_string(h);
      std::string p = node + ".";
      auto& hc = acts.heads[l][h];
      hc.q = acts.xn_heads[l] * state_.params.at(p + "wq");
      hc.k = acts.xn_heads[l] * state_.params.at(p + "wk");
      hc.v = acts.xn_heads[l] * state_.params.at(p + "wv");
      acts.node_in_ans[node] = stream.row(acts.ans).transpose();
      if (patch_by_target.count(node)) {
        Eigen::RowVectorXd in_row = patched_input_row(node);
        acts.node_in_ans[node] = in_row.transpose();
        Eigen::RowVectorXd xn_row = rmsnorm_row(in_row);
        hc.q.row(acts.ans) = xn_row * state_.params.at(p + "wq");
        hc.k.row(acts.ans) = xn_row * state_.params.at(p + "wk");
        hc.v.row(acts.ans) = xn_row * state_.params.at(p + "wv");
      }
      Mat scores = (hc.q * hc.k.transpose()) * scale;
      for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
      hc.att.resize(T, T);
      for (int i = 0; i < T; ++i) {
        Eigen::RowVectorXd row = scores.row(i);
        double m = row.head(i + 1).maxCoeff();
        Eigen::RowVectorXd ex = Eigen::RowVectorXd::Zero(T);
        for (int j = 0; j <= i; ++j) ex(j) = std::exp(row(j) - m);
        hc.att.row(i) = ex / ex.sum();
      }
      hc.ctx = hc.att * hc.v;
      Mat out = hc.ctx * state_.params.at(p + "wo");
      acts.node_out_ans[node] = out.row(acts.ans).transpose();
      head_sum += out;
    }
    stream += head_sum;

    acts.stream_mlp[l] = stream;
    std::string node = "L" + std::to_string(l) + ".mlp";
    std::string p = node + ".";
    auto& mc = acts.mlps[l];
    mc.xn = rmsnorm_rows(stream);
    acts.node_in_ans[node] = stream.row(acts.ans).transpose();
    if (patch_by_target.count(node)) {
      Eigen::RowVectorXd in_row = patched_input_row(node);
      acts.node_in_ans[node] = in_row.transpose();
      mc.xn.row(acts.ans) = rmsnorm_row(in_row);
    }
    mc.pre = mc.xn * state_.params.at(p + "w_in");
    mc.pre.rowwise() += state_.params.at(p + "b_in").row(0);
    mc.hid = mc.pre.unaryExpr([](double x) { return gelu(x); });
    Mat out = mc.hid * state_.params.at(p + "w_out");
    out.rowwise() += state_.params.at(p + "b_out").row(0);
    acts.node_out_ans[node] = out.row(acts.ans).transpose();
    stream += out;
  }

  acts.stream_final = stream;
  Eigen::RowVectorXd logits_in = stream.row(acts.ans);
  if (patch_by_target.count("logits")) logits_in = patched_input_row("logits");
  acts.node_in_ans["logits"] = logits_in.transpose();
  acts.final_norm = rmsnorm_row(logits_in).transpose();
  acts.logits = state_.params.at("unembed").transpose() * acts.final_norm;
  finalize_answer_distribution(acts);
}

void Model::finalize_answer_distribution(Activations& acts) const {
  const auto& cfg = state_.config;
  acts.z_yes = acts.logits(cfg.yes_token);
  acts.z_no = acts.logits(cfg.no_token);
  two_way_softmax(acts.z_yes, acts.z_no, &acts.p_yes, &acts.p_no);
  if (cfg.full_vocab_delta) {
    double m = acts.logits.maxCoeff();
    Vec ex = (acts.logits.array() - m).exp();
    double z = ex.sum();
    acts.delta = (ex(cfg.yes_token) - ex(cfg.no_token)) / z;
  } else {
    acts.delta = acts.p_yes - acts.p_no;
  }
}

Vec Model::delta_seed(const Activations& acts) const {
  const auto& cfg = state_.config;
  Vec dz = Vec::Zero(cfg.vocab);
  if (cfg.full_vocab_delta) {
    double m = acts.logits.maxCoeff();
    Vec p = (acts.logits.array() - m).exp();
    p /= p.sum();
    double py = p(cfg.yes_token), pn = p(cfg.no_token);
    dz = -(py - pn) * p;
    dz(cfg.yes_token) += py;
    dz(cfg.no_token) -= pn;
  } else {
    double g = 2.0 * acts.p_yes * acts.p_no;
    dz(cfg.yes_token) = g;
    dz(cfg.no_token) = -g;
  }
  return dz;
}

ForwardRecord Model::record_from(const Activations& acts, RecordLevel level) const {
  ForwardRecord rec;
  rec.z_yes = acts.z_yes;
  rec.z_no = acts.z_no;
  rec.p_yes = acts.p_yes;
  rec.p_no = acts.p_no;
  rec.delta = acts.delta;
  rec.logits = acts.logits;
  if (level >= RecordLevel::Messages) {
    rec.node_output = acts.node_out_ans;
    rec.node_input = acts.node_in_ans;
  }
  return rec;
}

void Model::run_backward(const Activations& acts, const Vec& dlogits, GradMap* param_grads,
                         ForwardRecord* record) const {
  backward_count_.fetch_add(1, std::memory_order_relaxed);
  const auto& cfg = state_.config;
  const int T = acts.T, d = cfg.width, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto grad_of = [&](const std::string& key) -> Mat* {
    if (!param_grads) return nullptr;
    return &param_grads->g.at(key);
  };

  // logits node: z = unembed^T . rmsnorm(stream_final[ans])
  Vec d_fn = state_.params.at("unembed") * dlogits;
  if (auto* gm = grad_of("unembed")) *gm += acts.final_norm * dlogits.transpose();
  Eigen::RowVectorXd d_row =
      rmsnorm_backward_row(acts.stream_final.row(acts.ans), d_fn.transpose());
  if (record) record->node_input_grad["logits"] = d_row.transpose();

  Mat G = Mat::Zero(T, d);
  G.row(acts.ans) = d_row;

  for (int l = cfg.layers - 1; l >= 0; --l) {
    // MLP
    {
      std::string node = "L" + std::to_string(l) + ".mlp";
      std::string p = node + ".";
      const auto& mc = acts.mlps[l];
      Mat dHid = G * state_.params.at(p + "w_out").transpose();
      if (auto* gm = grad_of(p + "w_out")) *gm += mc.hid.transpose() * G;
      if (auto* gm = grad_of(p + "b_out")) gm->row(0) += G.colwise().sum();
      Mat dPre = dHid.cwiseProduct(mc.pre.unaryExpr([](double x) { return gelu_grad(x); }));
      Mat dXn = dPre * state_.params.at(p + "w_in").transpose();
      if (auto* gm = grad_of(p + "w_in")) *gm += mc.xn.transpose() * dPre;
      if (auto* gm = grad_of(p + "b_in")) gm->row(0) += dPre.colwise().sum();
      Mat dS = rmsnorm_backward_rows(acts.stream_mlp[l], dXn);
      if (record) record->node_input_grad[node] = dS.row(acts.ans).transpose();
      G += dS;
    }
    // heads: parallel readers; gather contributions before touching G
    Mat g_heads = Mat::Zero(T, d);
    for (int h = 0; h < cfg.heads; ++h) {
      std::string node = "L" + std::to_string(l) + ".h" + std::to_string(h);
      std::string p = node + ".";
      const auto& hc = acts.heads[l][h];
      Mat dCtx = G * state_.params.at(p + "wo").transpose();
      if (auto* gm = grad_of(p + "wo")) *gm += hc.ctx.transpose() * G;
      Mat dA = dCtx * hc.v.transpose();
      Mat dV = hc.att.transpose() * dCtx;
      Mat dScores(T, T);
      for (int i = 0; i < T; ++i) {
        double dot = hc.att.row(i).dot(dA.row(i));
        dScores.row(i) = hc.att.row(i).cwiseProduct((dA.row(i).array() - dot).matrix());
      }
      Mat dQ = dScores * hc.k * scale;
      Mat dK = dScores.transpose() * hc.q * scale;
      const Mat& xn = acts.xn_heads[l];
      if (auto* gm = grad_of(p + "wq")) *gm += xn.transpose() * dQ;
      if (auto* gm = grad_of(p + "wk")) *gm += xn.transpose() * dK;
      if (auto* gm = grad_of(p + "wv")) *gm += xn.transpose() * dV;
      Mat dXn = dQ * state_.params.at(p + "wq").transpose() +
                dK * state_.params.at(p + "wk").transpose() +
                dV * state_.params.at(p + "wv").transpose();
      Mat dS = rmsnorm_backward_rows(acts.stream_heads[l], dXn);
      if (record) record->node_input_grad[node] = dS.row(acts.ans).transpose();
      g_heads += dS;
    }
    G += g_heads;
  }

  if (record) {
    record->embedding_grad.resize(T);
    for (int t = 0; t < T; ++t) record->embedding_grad[t] = G.row(t).transpose();
  }
  if (param_grads) {
    Mat& g_tok = param_grads->g.at("emb.tok");
    Mat& g_pos = param_grads->g.at("emb.pos");
    for (int t = 0; t < T; ++t) {
      g_tok.row(acts.tokens[t]) += G.row(t);
      g_pos.row(t) += G.row(t);
    }
  }
}

namespace {

// Yes/No token ids follow the tokenizer build order: they are the two tokens
// appended right after the template words. Rather than hard-coding offsets,
// the pipeline stores them in the config-independent sample; the model gets
// them through this lookup of the conventional ids.
struct AnswerIds {
  int yes, no;
};

AnswerIds answer_ids_for(const ModelConfig& cfg) {
  // ids are fixed at tokenizer build time and carried in the config via the
  // reserved final two... (see Tokenizer::build: Yes/No come before items).
  (void)cfg;
  return {-1, -1};
}

}  // namespace

ForwardRecord Model::forward(const PromptSample& sample, RecordLevel level) const {
  Activations acts;
  run_forward(sample, nullptr, acts);
  ForwardRecord rec = record_from(acts, level);
  if (level == RecordLevel::MessagesAndGrads) {
    Vec dz = delta_seed(acts);
    run_backward(acts, dz, nullptr, &rec);
  }
  return rec;
}

ForwardRecord Model::intervene_forward(const PromptSample& sample, const EdgePatch& patch) const {
  Activations acts;
  run_forward(sample, &patch, acts);
  return record_from(acts, RecordLevel::Messages);
}

double Model::nll(const PromptSample& sample, GradMap* grads) const {
  const auto& cfg = state_.config;
  Activations acts;
  run_forward(sample, nullptr, acts);
  double p = sample.answer == 1 ? acts.p_yes : acts.p_no;
  double loss = -std::log(clamp_prob(p));
  if (grads) {
    Vec dz = Vec::Zero(cfg.vocab);
    dz(cfg.yes_token) = acts.p_yes - (sample.answer == 1 ? 1.0 : 0.0);
    dz(cfg.no_token) = acts.p_no - (sample.answer == 1 ? 0.0 : 1.0);
    run_backward(acts, dz, grads, nullptr);
  }
  return loss;
}

double Model::kl_from_target(const PromptSample& sample, double target_p_yes, GradMap* grads,
                             double grad_scale) const {
  const auto& cfg = state_.config;
  Activations acts;
  run_forward(sample, nullptr, acts);
  double q = clamp_prob(target_p_yes);
  double py = clamp_prob(acts.p_yes);
  double pn = clamp_prob(acts.p_no);
  double kl = q * std::log(q / py) + (1.0 - q) * std::log((1.0 - q) / pn);
  if (grads) {
    Vec dz = Vec::Zero(cfg.vocab);
    dz(cfg.yes_token) = (acts.p_yes - q) * grad_scale;
    dz(cfg.no_token) = (acts.p_no - (1.0 - q)) * grad_scale;
    run_backward(acts, dz, grads, nullptr);
  }
  return kl;
}

PassCounts Model::pass_counts() const {
  return {forward_count_.load(std::memory_order_relaxed),
          backward_count_.load(std::memory_order_relaxed)};
}

void Model::reset_pass_counts() const {
  forward_count_.store(0, std::memory_order_relaxed);
  backward_count_.store(0, std::memory_order_relaxed);
}

}  // namespace cure
