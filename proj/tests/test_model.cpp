#include <doctest.h>

#include "cure/model.hpp"
#include "cure/trainer.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace cure;
using namespace cure::testing;

namespace {

const TinyWorld& tiny() {
  static TinyWorld w = make_tiny_world();
  return w;
}

const PromptSample& any_sample() { return tiny().split.train.front(); }

}  // namespace

TEST_CASE("init is deterministic and config-shaped") {
  ModelConfig cfg = tiny().model_config;
  ModelState a = ModelState::init(cfg);
  ModelState b = ModelState::init(cfg);
  CHECK(a.content_hash() == b.content_hash());
  for (const auto& [key, mat] : a.params) CHECK(mat.allFinite());

  ModelConfig wide = cfg;
  wide.width = 32;
  wide.heads = 4;
  CHECK(wide.head_dim() == 8);
}

TEST_CASE("node and edge counts follow the stream layout") {
  ModelConfig cfg = tiny().model_config;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.width = 32;
  ComputationGraph g = ComputationGraph::build(cfg);
  CHECK(g.nodes.size() == 1 + 2 * (4 + 1) + 1);  // input + per-layer nodes + logits
  CHECK(g.num_edges() == 54);                    // all inter-group pairs

  // input never receives, logits never sends
  for (const auto& e : g.edges) {
    CHECK(e.to.key() != "input");
    CHECK(e.from.key() != "logits");
  }
}

TEST_CASE("forward produces a normalized answer distribution") {
  Model model(ModelState::init(tiny().model_config));
  ForwardRecord rec = model.forward(any_sample());
  CHECK(rec.p_yes + rec.p_no == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rec.p_yes > 0.0);
  CHECK(rec.p_no > 0.0);
  CHECK(std::abs(rec.delta) < 0.5);  // symmetric init stays near even odds
}

TEST_CASE("recording is observation-only") {
  Model model(ModelState::init(tiny().model_config));
  ForwardRecord none = model.forward(any_sample(), RecordLevel::None);
  ForwardRecord msgs = model.forward(any_sample(), RecordLevel::Messages);
  ForwardRecord grads = model.forward(any_sample(), RecordLevel::MessagesAndGrads);
  CHECK(none.logits == msgs.logits);
  CHECK(none.logits == grads.logits);
  CHECK(none.delta == msgs.delta);
  CHECK(none.delta == grads.delta);
  CHECK(msgs.node_output.size() == grads.node_output.size());
}

TEST_CASE("input validation") {
  Model model(ModelState::init(tiny().model_config));
  PromptSample s = any_sample();
  s.tokens.assign(tiny().model_config.max_seq + 1, 0);
  CHECK_THROWS_AS(model.forward(s), ParseError);
  PromptSample bad = any_sample();
  bad.tokens[0] = tiny().model_config.vocab + 5;
  CHECK_THROWS_AS(model.forward(bad), ParseError);
}

TEST_CASE("residual additivity: node input equals the sum of incoming messages") {
  // trained weights so messages are not tiny
  static ModelState trained = train_fixture_model(tiny(), tiny().model_config, 2);
  Model model(trained);
  ForwardRecord rec = model.forward(any_sample(), RecordLevel::Messages);
  for (const auto& node : model.graph().nodes) {
    if (node.kind == NodeRef::Kind::Input) continue;
    Vec sum = Vec::Zero(model.config().width);
    for (const auto& up : model.graph().upstream_of(node.key()))
      sum += rec.node_output.at(up);
    double err = (sum - rec.node_input.at(node.key())).lpNorm<Eigen::Infinity>();
    CHECK(err < 1e-10);
  }
}

namespace {

// independent two-way softmax for the embedding-only check
double delta_of_logit_pair(double zy, double zn) {
  double m = std::max(zy, zn);
  double ey = std::exp(zy - m), en = std::exp(zn - m);
  return (ey - en) / (ey + en);
}

}  // namespace

TEST_CASE("intervention semantics") {
  static ModelState trained = train_fixture_model(tiny(), tiny().model_config, 2);
  Model model(trained);
  const PromptSample& s = any_sample();
  ForwardRecord clean = model.forward(s, RecordLevel::Messages);

  SUBCASE("empty patch is the identical forward pass") {
    ForwardRecord iv = model.intervene_forward(s, EdgePatch{});
    CHECK(iv.delta == clean.delta);
    CHECK(iv.logits == clean.logits);
  }

  SUBCASE("unknown edge is rejected") {
    EdgePatch patch;
    patch.replace[edge_key("L9.h9", "logits")] = Vec::Zero(model.config().width);
    CHECK_THROWS_AS(model.intervene_forward(s, patch), ParseError);
  }

  SUBCASE("re-patching recorded messages is a no-op") {
    // additivity again, via the patch path: replace every incoming message of
    // every node with its recorded value
    EdgePatch patch;
    for (const auto& e : model.graph().edges)
      patch.replace[e.key()] = clean.node_output.at(e.from.key());
    ForwardRecord iv = model.intervene_forward(s, patch);
    CHECK(iv.delta == doctest::Approx(clean.delta).epsilon(1e-12));
  }

  SUBCASE("zeroing all head/MLP edges into logits leaves the embedding pathway") {
    EdgePatch patch;
    for (const auto& e : model.graph().edges) {
      if (e.to.kind != NodeRef::Kind::Logits) continue;
      if (e.from.kind == NodeRef::Kind::Input) continue;
      patch.replace[e.key()] = Vec::Zero(model.config().width);
    }
    ForwardRecord iv = model.intervene_forward(s, patch);

    // embedding-only oracle, computed from raw parameters
    const Mat& tok_emb = model.state().params.at("emb.tok");
    const Mat& pos_emb = model.state().params.at("emb.pos");
    int ans = s.answer_position();
    Eigen::RowVectorXd row = tok_emb.row(s.tokens[ans]) + pos_emb.row(ans);
    double rms = std::sqrt(row.squaredNorm() / row.size() + 1e-8);
    Eigen::RowVectorXd fn = row / rms;
    Vec z = model.state().params.at("unembed").transpose() * fn.transpose();
    double expect = delta_of_logit_pair(z(model.config().yes_token), z(model.config().no_token));
    CHECK(iv.delta == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("first-order agreement improves quadratically under message scaling") {
    ForwardRecord rec = model.forward(s, RecordLevel::MessagesAndGrads);
    std::vector<double> errs;
    std::string probe = edge_key("L0.h0", "logits");
    const Vec& m = rec.node_output.at("L0.h0");
    double grad_dot = m.dot(rec.node_input_grad.at("logits"));
    for (double scale : {1.0, 0.5, 0.25}) {
      EdgePatch patch;
      patch.replace[probe] = (1.0 - scale) * m;  // remove scale * m
      double got = model.intervene_forward(s, patch).delta;
      double estimate = clean.delta - scale * grad_dot;
      errs.push_back(std::abs(got - estimate));
    }
    // halving the perturbation should roughly quarter the error
    CHECK(errs[0] > errs[1]);
    CHECK(errs[1] > errs[2]);
    CHECK(errs[0] / std::max(errs[1], 1e-18) > 3.0);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  // very small model so the exhaustive sweep stays fast
  TinyWorld w = make_tiny_world(23, 10, 8, 2);
  ModelConfig cfg = w.model_config;
  cfg.width = 8;
  cfg.mlp_width = 10;
  cfg.heads = 2;
  cfg.init_scale = 0.35;  // strong nonlinearity
  ModelState state = ModelState::init(cfg);
  const PromptSample& s = w.split.train.front();

  auto check_all = [&](auto&& loss_of, const GradMap& analytic, const char* tag) {
    const double h = 1e-5;
    for (const auto& [key, mat] : state.params) {
      for (int r = 0; r < mat.rows(); ++r) {
        for (int c = 0; c < mat.cols(); ++c) {
          double fd = central_difference(state, key, r, c, h, loss_of);
          double an = analytic.g.at(key)(r, c);
          double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
          INFO(tag << " " << key << "(" << r << "," << c << ")");
          CHECK(std::abs(fd - an) / denom < 1e-4);
        }
      }
    }
  };

  SUBCASE("nll gradients") {
    GradMap grads = GradMap::zeros_like(state);
    Model model(state);
    model.nll(s, &grads);
    check_all([&](const ModelState& st) { return Model(st).nll(s); }, grads, "nll");
  }

  SUBCASE("kl gradients") {
    GradMap grads = GradMap::zeros_like(state);
    Model model(state);
    model.kl_from_target(s, 0.85, &grads, 1.0);
    check_all([&](const ModelState& st) { return Model(st).kl_from_target(s, 0.85); }, grads,
              "kl");
  }

  SUBCASE("delta embedding gradients match a positional sweep") {
    Model model(state);
    ForwardRecord rec = model.forward(s, RecordLevel::MessagesAndGrads);
    const double h = 1e-6;
    for (int t = 0; t < static_cast<int>(s.tokens.size()); ++t) {
      for (int c = 0; c < cfg.width; ++c) {
        double fd = central_difference(
            state, "emb.pos", t, c, h,
            [&](const ModelState& st) { return Model(st).forward(s).delta; });
        double an = rec.embedding_grad[t](c);
        double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        CHECK(std::abs(fd - an) / denom < 1e-4);
      }
    }
  }
}

TEST_CASE("nll closed forms") {
  // doctored unembedding: answer logits forced equal -> P = 0.5 -> loss = ln 2
  ModelState state = ModelState::init(tiny().model_config);
  state.params.at("unembed").setZero();
  Model model(state);
  double loss = model.nll(any_sample());
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  ForwardRecord rec = model.forward(any_sample());
  CHECK(rec.p_yes == doctest::Approx(0.5));
}

TEST_CASE("training") {
  const TinyWorld& w = tiny();

  SUBCASE("zero epochs leaves the state unchanged") {
    ModelState init = ModelState::init(w.model_config);
    OptimizerConfig opt;
    opt.epochs = 0;
    TrainResult r = train_model(init, w.graph, w.tok, w.tmpl, w.split.train, {}, opt, 1);
    CHECK(r.state.content_hash() == init.content_hash());
  }

  SUBCASE("same seed and data give identical parameters") {
    OptimizerConfig opt;
    opt.epochs = 2;
    opt.threads = 1;
    ModelState init = ModelState::init(w.model_config);
    TrainResult a = train_model(init, w.graph, w.tok, w.tmpl, w.split.train, {}, opt, 5);
    TrainResult b = train_model(init, w.graph, w.tok, w.tmpl, w.split.train, {}, opt, 5);
    CHECK(a.state.content_hash() == b.state.content_hash());
  }

  SUBCASE("full-batch loss decreases monotonically on a small fixture") {
    std::vector<PromptSample> eight(w.split.train.begin(), w.split.train.begin() + 8);
    OptimizerConfig opt;
    opt.epochs = 50;
    opt.batch_size = 8;
    opt.lr = 1e-3;
    opt.negatives_per_positive = 0;  // keep the batch fixed
    opt.weight_decay = 0.0;
    TrainResult r = train_model(ModelState::init(w.model_config), w.graph, w.tok, w.tmpl, eight,
                                {}, opt, 3);
    REQUIRE(r.log.size() == 50);
    for (std::size_t e = 1; e < r.log.size(); ++e)
      CHECK(r.log[e].mean_loss < r.log[e - 1].mean_loss);
  }

  SUBCASE("non-finite state aborts with a diagnostic") {
    OptimizerConfig opt;
    opt.epochs = 1;
    ModelState bad = ModelState::init(w.model_config);
    bad.params.at("unembed")(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train_model(bad, w.graph, w.tok, w.tmpl, w.split.train, {}, opt, 1),
                    TrainingDivergence);
  }
}

TEST_CASE("checkpoint round trip is byte-identical") {
  namespace fs = std::filesystem;
  ModelState state = train_fixture_model(tiny(), tiny().model_config, 1);
  fs::path dir = fs::temp_directory_path() / "cure_test_ckpt";
  fs::create_directories(dir);
  std::string p1 = (dir / "a.ckpt").string(), p2 = (dir / "b.ckpt").string();
  save_checkpoint(state, p1);
  ModelState loaded = load_checkpoint(p1);
  CHECK(loaded.content_hash() == state.content_hash());
  save_checkpoint(loaded, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), ParseError);
}
