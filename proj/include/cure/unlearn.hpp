#pragma once
// Circuit-aware unlearning: KL forget/retain losses against the frozen
// original model, group-specific gradient routing with conflict projection on
// the shared group, two uniform baselines, and alignment telemetry.

#include "cure/circuits.hpp"
#include "cure/model.hpp"
#include "cure/trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cure {

struct UnlearnConfig {
  double omega_r = 0.6;  // omega_f = 1 - omega_r
  double lr = 5e-5;
  int steps = 200;
  int batch_size = 32;
  int retain_multiplier = 6;           // k: |retain buffer| = k * |forget|
  double conflict_threshold = -0.02;   // cos below this counts as a conflict
  bool normalize_shared = true;        // rescale shared gradients to unit norm
  bool use_adamw = true;               // plain gradient steps when false
  std::uint64_t seed = 0;
  int threads = 1;

  double omega_f() const { return 1.0 - omega_r; }
  void validate() const;
};

struct LossResult {
  double value = 0;
  GradMap grads;
};

// L_F = -mean KL(original || current) over the batch; gradients on current only.
LossResult forget_loss(const Model& original, const Model& current,
                       const std::vector<const PromptSample*>& batch, int threads = 1);
// L_R = +mean KL(original || current).
LossResult retain_loss(const Model& original, const Model& current,
                       const std::vector<const PromptSample*>& batch, int threads = 1);

struct ProjectionInfo {
  std::optional<double> cos_raw;        // before projection (after normalization)
  std::optional<double> cos_effective;  // between the combined constituents
  bool conflicted = false;
  bool projected = false;
  Vec g_r_out, g_f_out;  // constituents of the combined gradient
};

// Weighted combination with mutual projection in the conflict branch. Vectors
// with norm below 1e-12 skip both normalization and projection.
Vec project_shared(Vec g_r, double omega_r, Vec g_f, double omega_f, bool normalize,
                   ProjectionInfo* info = nullptr);

struct GroupGradients {
  Vec g_sh_F, g_sh_R;  // shared group under each objective
  Vec g_f_F, g_r_R;    // group-specific gradients used for updates
  Vec g_f_R, g_r_F;    // diagnostics only
  std::optional<double> cos_psi_raw;
};

struct TraceRow {
  int step = 0;
  double loss_f = 0, loss_r = 0, loss = 0;
  std::optional<double> a_f, a_r, cos_psi;
  bool conflict = false;
  double wall_ms = 0;
};

struct AlignmentTrace {
  std::vector<TraceRow> rows;
  void write_csv(const std::string& path) const;
  static AlignmentTrace read_csv(const std::string& path);
};

// A_f = g.g_f / ||g_f||^2 and A_r = g.g_r / ||g_r||^2; nullopt on zero norms.
std::pair<std::optional<double>, std::optional<double>> alignment(const Vec& g, const Vec& g_f,
                                                                  const Vec& g_r);

// One plain gradient step with group routing; parameters outside the partition
// stay bit-identical. Exposed for property tests; the full loop lives in
// run_unlearning.
TraceRow unlearn_step(const Model& original, Model& current, const ParameterPartition& part,
                      const std::vector<const PromptSample*>& forget_batch,
                      const std::vector<const PromptSample*>& retain_batch,
                      const UnlearnConfig& cfg, GroupGradients* groups = nullptr);

enum class UnlearnMethod { Cure, Uniform, GradientAscent };

std::string to_string(UnlearnMethod m);
UnlearnMethod unlearn_method_from_string(const std::string& s);

struct UnlearnResult {
  ModelState model;
  AlignmentTrace trace;
  double wall_seconds = 0;
};

UnlearnResult run_unlearning(const Model& original, const ParameterPartition& part,
                             const std::vector<PromptSample>& forget,
                             const std::vector<PromptSample>& retain_buffer,
                             const UnlearnConfig& cfg);
// Joint update omega_f grad L_F + omega_r grad L_R on every head/MLP parameter.
UnlearnResult baseline_uniform(const Model& original, const std::vector<PromptSample>& forget,
                               const std::vector<PromptSample>& retain_buffer,
                               const UnlearnConfig& cfg);
// NLL ascent on the forget set, descent on the retain buffer, same parameter pool.
UnlearnResult baseline_gradient_ascent(const Model& original,
                                       const std::vector<PromptSample>& forget,
                                       const std::vector<PromptSample>& retain_buffer,
                                       const UnlearnConfig& cfg);

// --- synthetic theorem check -------------------------------------------------
// Two random quadratic objectives over (shared, forget, retain) parameter
// blocks. Gradients at the origin are unit-norm on the shared block for both
// objectives, and each specific block is touched by exactly one objective.

struct QuadraticObjective {
  Vec g0;  // gradient at theta = 0
  Mat H;   // PSD curvature
  double loss(const Vec& theta) const { return g0.dot(theta) + 0.5 * theta.dot(H * theta); }
  Vec grad(const Vec& theta) const { return g0 + H * theta; }
};

struct QuadraticWorld {
  int d_sh = 8, d_f = 6, d_r = 6;
  QuadraticObjective f, r;
  int dim() const { return d_sh + d_f + d_r; }
  static QuadraticWorld random(std::uint64_t seed, int d_sh = 8, int d_f = 6, int d_r = 6);
};

struct TheoremCheckResult {
  double loss_routed = 0;   // one group-routed step
  double loss_uniform = 0;  // one joint step
  double cos_psi = 0;       // shared-block angle at the origin
};

TheoremCheckResult theorem_one_step(const QuadraticWorld& world, double omega_r, double alpha,
                                    bool normalize);

}  // namespace cure
