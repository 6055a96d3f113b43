#include "cure/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cure {

void UnlearnConfig::validate() const {
  if (omega_r <= 0.0 || omega_r >= 1.0) throw ConfigError("omega_r must lie in (0,1)");
  if (lr <= 0.0) throw ConfigError("unlearning learning rate must be positive");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (retain_multiplier < 1) throw ConfigError("retain multiplier must be >= 1");
}

namespace {

// mean KL(original || current) with gradients scaled by sign/n.
LossResult kl_batch(const Model& current, const std::vector<const PromptSample*>& batch,
                    const std::vector<double>& target_p_yes, double sign, int threads) {
  LossResult out;
  out.grads = GradMap::zeros_like(current.state());
  const std::size_t n = batch.size();
  if (n == 0) return out;
  const double scale = sign / static_cast<double>(n);

  if (threads <= 1 || n < 4) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i)
      total += current.kl_from_target(*batch[i], target_p_yes[i], &out.grads, scale);
    out.value = sign * total / static_cast<double>(n);
    return out;
  }
  int workers = std::min<int>(threads, static_cast<int>(n));
  std::vector<double> partial(workers, 0.0);
  std::vector<GradMap> pgrads;
  for (int w = 0; w < workers; ++w) pgrads.push_back(GradMap::zeros_like(current.state()));
  std::size_t chunk = (n + workers - 1) / workers;
  parallel_chunks(n, workers, [&](std::size_t lo, std::size_t hi) {
    int w = static_cast<int>(lo / chunk);
    for (std::size_t i = lo; i < hi; ++i)
      partial[w] += current.kl_from_target(*batch[i], target_p_yes[i], &pgrads[w], scale);
  });
  for (int w = 0; w < workers; ++w) out.grads.accumulate(pgrads[w]);
  out.value = sign * std::accumulate(partial.begin(), partial.end(), 0.0) /
              static_cast<double>(n);
  return out;
}

std::vector<double> original_p_yes(const Model& original,
                                   const std::vector<const PromptSample*>& batch, int threads) {
  std::vector<double> p(batch.size(), 0.0);
  parallel_chunks(batch.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) p[i] = original.forward(*batch[i]).p_yes;
  });
  return p;
}

std::vector<const PromptSample*> as_ptrs(const std::vector<PromptSample>& v) {
  std::vector<const PromptSample*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(&s);
  return out;
}

}  // namespace

LossResult forget_loss(const Model& original, const Model& current,
                       const std::vector<const PromptSample*>& batch, int threads) {
  auto targets = original_p_yes(original, batch, threads);
  return kl_batch(current, batch, targets, -1.0, threads);
}

LossResult retain_loss(const Model& original, const Model& current,
                       const std::vector<const PromptSample*>& batch, int threads) {
  auto targets = original_p_yes(original, batch, threads);
  return kl_batch(current, batch, targets, +1.0, threads);
}

Vec project_shared(Vec g_r, double omega_r, Vec g_f, double omega_f, bool normalize,
                   ProjectionInfo* info) {
  if (g_r.size() != g_f.size()) throw ConfigError("projection requires equal-length vectors");
  const double tiny = 1e-12;
  double nr = g_r.norm(), nf = g_f.norm();
  if (nr < tiny || nf < tiny) {
    if (info) *info = {};
    return omega_r * g_r + omega_f * g_f;
  }
  if (normalize) {
    g_r /= nr;
    g_f /= nf;
    nr = nf = 1.0;
  }
  double dot = g_r.dot(g_f);
  double cos_raw = dot / (nr * nf);
  if (info) {
    info->cos_raw = cos_raw;
    info->conflicted = dot < 0.0;
  }
  if (dot >= 0.0) {
    if (info) {
      info->cos_effective = cos_raw;
      info->g_r_out = g_r;
      info->g_f_out = g_f;
    }
    return omega_r * g_r + omega_f * g_f;
  }
  Vec g_r_proj = g_r - (dot / (nf * nf)) * g_f;
  Vec g_f_proj = g_f - (dot / (nr * nr)) * g_r;
  if (info) {
    info->projected = true;
    info->g_r_out = g_r_proj;
    info->g_f_out = g_f_proj;
    double npr = g_r_proj.norm(), npf = g_f_proj.norm();
    if (npr > tiny && npf > tiny)
      info->cos_effective = g_r_proj.dot(g_f_proj) / (npr * npf);
  }
  return omega_r * g_r_proj + omega_f * g_f_proj;
}

std::pair<std::optional<double>, std::optional<double>> alignment(const Vec& g, const Vec& g_f,
                                                                  const Vec& g_r) {
  std::optional<double> a_f, a_r;
  double nf = g_f.squaredNorm(), nr = g_r.squaredNorm();
  if (nf > 0) a_f = g.dot(g_f) / nf;
  if (nr > 0) a_r = g.dot(g_r) / nr;
  return {a_f, a_r};
}

namespace {

void apply_update(ModelState& state, const std::vector<std::string>& keys, const Vec& update) {
  long at = 0;
  for (const auto& k : keys) {
    Mat& m = state.params.at(k);
    Eigen::Map<Eigen::VectorXd> flat(m.data(), m.size());
    flat -= update.segment(at, m.size());
    at += m.size();
  }
}

std::vector<std::string> all_partitionable_keys(const ModelState& state) {
  std::vector<std::string> keys;
  ComputationGraph graph = ComputationGraph::build(state.config);
  for (const auto& node : graph.nodes) {
    auto pk = node_parameter_keys(node);
    keys.insert(keys.end(), pk.begin(), pk.end());
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", *v);
  return buf;
}

}  // namespace

TraceRow unlearn_step(const Model& original, Model& current, const ParameterPartition& part,
                      const std::vector<const PromptSample*>& forget_batch,
                      const std::vector<const PromptSample*>& retain_batch,
                      const UnlearnConfig& cfg, GroupGradients* groups) {
  auto t0 = std::chrono::steady_clock::now();
  LossResult lf = forget_loss(original, current, forget_batch, cfg.threads);
  LossResult lr = retain_loss(original, current, retain_batch, cfg.threads);
  if (!std::isfinite(lf.value) || !std::isfinite(lr.value) || !lf.grads.all_finite() ||
      !lr.grads.all_finite())
    throw TrainingDivergence("non-finite gradients in unlearning step");

  GroupGradients gg;
  gg.g_sh_F = lf.grads.flatten(part.shared_keys);
  gg.g_sh_R = lr.grads.flatten(part.shared_keys);
  gg.g_f_F = lf.grads.flatten(part.forget_keys);
  gg.g_r_R = lr.grads.flatten(part.retain_keys);
  gg.g_f_R = lr.grads.flatten(part.forget_keys);
  gg.g_r_F = lf.grads.flatten(part.retain_keys);

  ProjectionInfo pinfo;
  Vec d_sh = project_shared(gg.g_sh_R, cfg.omega_r, gg.g_sh_F, cfg.omega_f(),
                            cfg.normalize_shared, &pinfo);
  gg.cos_psi_raw = pinfo.cos_raw;

  apply_update(current.mutable_state(), part.forget_keys, cfg.lr * gg.g_f_F);
  apply_update(current.mutable_state(), part.retain_keys, cfg.lr * gg.g_r_R);
  apply_update(current.mutable_state(), part.shared_keys, cfg.lr * d_sh);

  TraceRow row;
  row.loss_f = lf.value;
  row.loss_r = lr.value;
  row.loss = cfg.omega_f() * lf.value + cfg.omega_r * lr.value;
  auto keys = part.circuit_keys();
  GradMap applied = GradMap::zeros_like(current.state());
  {
    long at = 0;
    auto put = [&](const std::vector<std::string>& group_keys, const Vec& d) {
      long off = 0;
      for (const auto& k : group_keys) {
        Mat& m = applied.g.at(k);
        Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = d.segment(off, m.size());
        off += m.size();
      }
    };
    put(part.forget_keys, gg.g_f_F);
    put(part.retain_keys, gg.g_r_R);
    put(part.shared_keys, d_sh);
    (void)at;
  }
  auto [a_f, a_r] = alignment(applied.flatten(keys), lf.grads.flatten(keys),
                              lr.grads.flatten(keys));
  row.a_f = a_f;
  row.a_r = a_r;
  row.cos_psi = pinfo.cos_effective;
  row.conflict = pinfo.cos_raw.has_value() && *pinfo.cos_raw < cfg.conflict_threshold;
  row.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (groups) *groups = std::move(gg);
  return row;
}

void AlignmentTrace::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write trace: " + path);
  out << "step,L_F,L_R,L,A_f,A_r,cos_psi,conflict_flag,wall_ms\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.10g", r.loss_f);
    out << r.step << "," << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.10g", r.loss_r);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.10g", r.loss);
    out << buf << ",";
    out << fmt_opt(r.a_f) << "," << fmt_opt(r.a_r) << "," << fmt_opt(r.cos_psi) << ","
        << (r.conflict ? 1 : 0) << ",";
    std::snprintf(buf, sizeof(buf), "%.3f", r.wall_ms);
    out << buf << "\n";
  }
}

AlignmentTrace AlignmentTrace::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace: " + path);
  AlignmentTrace trace;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 9) cells.push_back("");
    TraceRow r;
    r.step = std::stoi(cells[0]);
    r.loss_f = std::stod(cells[1]);
    r.loss_r = std::stod(cells[2]);
    r.loss = std::stod(cells[3]);
    if (!cells[4].empty()) r.a_f = std::stod(cells[4]);
    if (!cells[5].empty()) r.a_r = std::stod(cells[5]);
    if (!cells[6].empty()) r.cos_psi = std::stod(cells[6]);
    r.conflict = cells[7] == "1";
    if (!cells[8].empty()) r.wall_ms = std::stod(cells[8]);
    trace.rows.push_back(r);
  }
  return trace;
}

std::string to_string(UnlearnMethod m) {
  switch (m) {
    case UnlearnMethod::Cure: return "cure";
    case UnlearnMethod::Uniform: return "uniform";
    case UnlearnMethod::GradientAscent: return "gradient_ascent";
  }
  return "cure";
}

UnlearnMethod unlearn_method_from_string(const std::string& s) {
  if (s == "cure") return UnlearnMethod::Cure;
  if (s == "uniform") return UnlearnMethod::Uniform;
  if (s == "gradient_ascent") return UnlearnMethod::GradientAscent;
  throw ConfigError("unknown unlearning method: " + s);
}

namespace {

// Deterministic batch cycling: reshuffle with the step rng whenever the list
// is exhausted.
class BatchCycler {
 public:
  BatchCycler(const std::vector<PromptSample>& samples, int batch_size, std::uint64_t seed)
      : samples_(samples), batch_(batch_size), rng_(seed) {
    order_.resize(samples.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::vector<const PromptSample*> next() {
    std::vector<const PromptSample*> out;
    if (samples_.empty()) return out;
    for (int i = 0; i < batch_; ++i) {
      if (at_ >= order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        at_ = 0;
      }
      out.push_back(&samples_[order_[at_++]]);
    }
    return out;
  }

 private:
  const std::vector<PromptSample>& samples_;
  int batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t at_ = 0;
};

UnlearnResult run_loop(const Model& original, const ParameterPartition* part,
                       const std::vector<PromptSample>& forget,
                       const std::vector<PromptSample>& retain_buffer, const UnlearnConfig& cfg,
                       UnlearnMethod method) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  UnlearnResult result;
  Model current(original.state());

  std::vector<std::string> uniform_keys;
  if (method != UnlearnMethod::Cure) uniform_keys = all_partitionable_keys(original.state());

  // Frozen-model targets are constant across steps.
  auto forget_ptrs = as_ptrs(forget);
  auto retain_ptrs = as_ptrs(retain_buffer);
  auto forget_targets = original_p_yes(original, forget_ptrs, cfg.threads);
  auto retain_targets = original_p_yes(original, retain_ptrs, cfg.threads);
  std::map<const PromptSample*, double> target_of;
  for (std::size_t i = 0; i < forget_ptrs.size(); ++i) target_of[forget_ptrs[i]] = forget_targets[i];
  for (std::size_t i = 0; i < retain_ptrs.size(); ++i) target_of[retain_ptrs[i]] = retain_targets[i];

  BatchCycler forget_cycle(forget, cfg.batch_size, hash_u64(cfg.seed, hash_str("forget")));
  BatchCycler retain_cycle(retain_buffer, cfg.batch_size, hash_u64(cfg.seed, hash_str("retain")));

  // Optimizer state per routed group (or one for the uniform pool).
  AdamW opt_f, opt_r, opt_sh, opt_all;
  auto setup = [&](AdamW& a, long dim) {
    a.beta1 = 0.9;
    a.beta2 = 0.999;
    a.eps = 1e-8;
    a.weight_decay = 0.0;
    a.init(dim);
  };
  auto dim_of = [&](const std::vector<std::string>& keys) {
    long d = 0;
    for (const auto& k : keys) d += original.state().params.at(k).size();
    return d;
  };
  if (method == UnlearnMethod::Cure) {
    setup(opt_f, dim_of(part->forget_keys));
    setup(opt_r, dim_of(part->retain_keys));
    setup(opt_sh, dim_of(part->shared_keys));
  } else {
    setup(opt_all, dim_of(uniform_keys));
  }

  auto flat_params = [&](const std::vector<std::string>& keys) {
    Vec v(dim_of(keys));
    long at = 0;
    for (const auto& k : keys) {
      const Mat& m = current.state().params.at(k);
      std::copy(m.data(), m.data() + m.size(), v.data() + at);
      at += m.size();
    }
    return v;
  };
  auto routed_update = [&](AdamW& a, const std::vector<std::string>& keys, const Vec& g) {
    if (g.size() == 0) return;
    Vec upd = cfg.use_adamw ? a.step(g, flat_params(keys), cfg.lr) : Vec(cfg.lr * g);
    apply_update(current.mutable_state(), keys, upd);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    auto ts = std::chrono::steady_clock::now();
    auto fb = forget_cycle.next();
    auto rb = retain_cycle.next();
    std::vector<double> ft, rt;
    for (const auto* s : fb) ft.push_back(target_of.at(s));
    for (const auto* s : rb) rt.push_back(target_of.at(s));

    TraceRow row;
    row.step = step;

    if (method == UnlearnMethod::GradientAscent) {
      // Ascend prediction NLL on the forget batch, descend it on the buffer.
      GradMap gf = GradMap::zeros_like(current.state());
      GradMap gr = GradMap::zeros_like(current.state());
      double nll_f = batch_nll_grads(current, fb, &gf, cfg.threads);
      double nll_r = batch_nll_grads(current, rb, &gr, cfg.threads);
      gf.scale(1.0 / std::max<std::size_t>(1, fb.size()));
      gr.scale(1.0 / std::max<std::size_t>(1, rb.size()));
      if (!std::isfinite(nll_f) || !std::isfinite(nll_r))
        throw TrainingDivergence("non-finite loss in gradient-ascent step");
      Vec vf = gf.flatten(uniform_keys);  // gradient of the (negated) forget objective
      Vec vr = gr.flatten(uniform_keys);
      Vec g_forget_obj = -vf;  // objective being minimized: -NLL_forget
      Vec joint = cfg.omega_f() * g_forget_obj + cfg.omega_r * vr;
      routed_update(opt_all, uniform_keys, joint);
      row.loss_f = -nll_f;
      row.loss_r = nll_r;
      row.loss = cfg.omega_f() * row.loss_f + cfg.omega_r * row.loss_r;
      double nf = g_forget_obj.norm(), nr2 = vr.norm();
      if (nf > 0 && nr2 > 0) row.cos_psi = g_forget_obj.dot(vr) / (nf * nr2);
      row.conflict = row.cos_psi && *row.cos_psi < cfg.conflict_threshold;
      auto [af, ar] = alignment(joint, g_forget_obj, vr);
      row.a_f = af;
      row.a_r = ar;
    } else {
      LossResult lf = kl_batch(current, fb, ft, -1.0, cfg.threads);
      LossResult lr = kl_batch(current, rb, rt, +1.0, cfg.threads);
      if (!std::isfinite(lf.value) || !std::isfinite(lr.value) || !lf.grads.all_finite() ||
          !lr.grads.all_finite())
        throw TrainingDivergence("non-finite gradients in unlearning step " +
                                 std::to_string(step));
      row.loss_f = lf.value;
      row.loss_r = lr.value;
      row.loss = cfg.omega_f() * lf.value + cfg.omega_r * lr.value;

      if (method == UnlearnMethod::Uniform) {
        Vec vf = lf.grads.flatten(uniform_keys);
        Vec vr = lr.grads.flatten(uniform_keys);
        Vec joint = cfg.omega_f() * vf + cfg.omega_r * vr;
        routed_update(opt_all, uniform_keys, joint);
        double nf = vf.norm(), nr2 = vr.norm();
        if (nf > 0 && nr2 > 0) row.cos_psi = vf.dot(vr) / (nf * nr2);
        row.conflict = row.cos_psi && *row.cos_psi < cfg.conflict_threshold;
        auto [af, ar] = alignment(joint, vf, vr);
        row.a_f = af;
        row.a_r = ar;
      } else {
        Vec g_f_F = lf.grads.flatten(part->forget_keys);
        Vec g_r_R = lr.grads.flatten(part->retain_keys);
        Vec g_sh_F = lf.grads.flatten(part->shared_keys);
        Vec g_sh_R = lr.grads.flatten(part->shared_keys);
        ProjectionInfo pinfo;
        Vec d_sh = project_shared(g_sh_R, cfg.omega_r, g_sh_F, cfg.omega_f(),
                                  cfg.normalize_shared, &pinfo);
        routed_update(opt_f, part->forget_keys, g_f_F);
        routed_update(opt_r, part->retain_keys, g_r_R);
        routed_update(opt_sh, part->shared_keys, d_sh);
        row.cos_psi = pinfo.cos_effective;
        row.conflict = pinfo.cos_raw.has_value() && *pinfo.cos_raw < cfg.conflict_threshold;

        auto keys = part->circuit_keys();
        GradMap applied = GradMap::zeros_like(current.state());
        auto put = [&](const std::vector<std::string>& gkeys, const Vec& d) {
          long off = 0;
          for (const auto& k : gkeys) {
            Mat& m = applied.g.at(k);
            Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = d.segment(off, m.size());
            off += m.size();
          }
        };
        put(part->forget_keys, g_f_F);
        put(part->retain_keys, g_r_R);
        put(part->shared_keys, d_sh);
        auto [af, ar] = alignment(applied.flatten(keys), lf.grads.flatten(keys),
                                  lr.grads.flatten(keys));
        row.a_f = af;
        row.a_r = ar;
      }
    }

    row.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - ts).count();
    result.trace.rows.push_back(row);
  }

  result.model = current.state();
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace

UnlearnResult run_unlearning(const Model& original, const ParameterPartition& part,
                             const std::vector<PromptSample>& forget,
                             const std::vector<PromptSample>& retain_buffer,
                             const UnlearnConfig& cfg) {
  return run_loop(original, &part, forget, retain_buffer, cfg, UnlearnMethod::Cure);
}

UnlearnResult baseline_uniform(const Model& original, const std::vector<PromptSample>& forget,
                               const std::vector<PromptSample>& retain_buffer,
                               const UnlearnConfig& cfg) {
  return run_loop(original, nullptr, forget, retain_buffer, cfg, UnlearnMethod::Uniform);
}

UnlearnResult baseline_gradient_ascent(const Model& original,
                                       const std::vector<PromptSample>& forget,
                                       const std::vector<PromptSample>& retain_buffer,
                                       const UnlearnConfig& cfg) {
  return run_loop(original, nullptr, forget, retain_buffer, cfg, UnlearnMethod::GradientAscent);
}

QuadraticWorld QuadraticWorld::random(std::uint64_t seed, int d_sh, int d_f, int d_r) {
  QuadraticWorld w;
  w.d_sh = d_sh;
  w.d_f = d_f;
  w.d_r = d_r;
  Rng rng(seed);
  int dim = w.dim();

  auto unit = [&rng](int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = draw_normal(rng);
    double nv = v.norm();
    if (nv < 1e-9) v(0) = 1.0, nv = 1.0;
    return Vec(v / nv);
  };

  // Shared-block gradients: unit vectors with an angle drawn uniformly over
  // (0, pi), so conflicting and aligned instances are equally represented.
  Vec u = unit(d_sh);
  Vec w_perp = unit(d_sh);
  w_perp -= w_perp.dot(u) * u;
  if (w_perp.norm() < 1e-9) {
    w_perp = Vec::Zero(d_sh);
    w_perp((u.cwiseAbs().maxCoeff() > 0 ? 1 : 0) % d_sh) = 1.0;
    w_perp -= w_perp.dot(u) * u;
  }
  w_perp /= w_perp.norm();
  double psi = draw_unit(rng) * M_PI;
  Vec v = std::cos(psi) * u + std::sin(psi) * w_perp;

  Vec g_f_own = unit(d_f);
  Vec g_r_own = unit(d_r);

  w.r.g0 = Vec::Zero(dim);
  w.r.g0.segment(0, d_sh) = u;
  w.r.g0.segment(d_sh + d_f, d_r) = g_r_own;
  w.f.g0 = Vec::Zero(dim);
  w.f.g0.segment(0, d_sh) = v;
  w.f.g0.segment(d_sh, d_f) = g_f_own;

  // PSD curvature supported on the blocks each objective touches.
  auto psd_block = [&rng](int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = draw_normal(rng);
    return Mat((m.transpose() * m) / static_cast<double>(n));
  };
  w.f.H = Mat::Zero(dim, dim);
  w.r.H = Mat::Zero(dim, dim);
  {
    Mat hb = psd_block(d_sh + d_f);
    w.f.H.block(0, 0, d_sh + d_f, d_sh + d_f) = hb;
  }
  {
    Mat hb = psd_block(d_sh + d_r);
    w.r.H.block(0, 0, d_sh, d_sh) = hb.block(0, 0, d_sh, d_sh);
    w.r.H.block(0, d_sh + d_f, d_sh, d_r) = hb.block(0, d_sh, d_sh, d_r);
    w.r.H.block(d_sh + d_f, 0, d_r, d_sh) = hb.block(d_sh, 0, d_r, d_sh);
    w.r.H.block(d_sh + d_f, d_sh + d_f, d_r, d_r) = hb.block(d_sh, d_sh, d_r, d_r);
  }
  return w;
}

TheoremCheckResult theorem_one_step(const QuadraticWorld& world, double omega_r, double alpha,
                                    bool normalize) {
  double omega_f = 1.0 - omega_r;
  int d_sh = world.d_sh, d_f = world.d_f, d_r = world.d_r;
  Vec gF = world.f.g0;
  Vec gR = world.r.g0;

  Vec gF_sh = gF.segment(0, d_sh), gR_sh = gR.segment(0, d_sh);
  ProjectionInfo info;
  Vec d_shared = project_shared(gR_sh, omega_r, gF_sh, omega_f, normalize, &info);

  Vec routed = Vec::Zero(world.dim());
  routed.segment(0, d_sh) = d_shared;
  routed.segment(d_sh, d_f) = gF.segment(d_sh, d_f);          // forget-specific: g_f^F
  routed.segment(d_sh + d_f, d_r) = gR.segment(d_sh + d_f, d_r);  // retain-specific: g_r^R
  Vec theta_routed = -alpha * routed;

  Vec theta_uniform = -alpha * (omega_r * gR + omega_f * gF);

  TheoremCheckResult res;
  res.loss_routed =
      omega_r * world.r.loss(theta_routed) + omega_f * world.f.loss(theta_routed);
  res.loss_uniform =
      omega_r * world.r.loss(theta_uniform) + omega_f * world.f.loss(theta_uniform);
  res.cos_psi = info.cos_raw.value_or(1.0);
  return res;
}

}  // namespace cure
