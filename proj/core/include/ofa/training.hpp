#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ofa/error.hpp"
#include "ofa/model.hpp"
#include "ofa/objectives.hpp"
#include "ofa/oracle.hpp"
#include "ofa/parallel.hpp"
#include "ofa/rng.hpp"
#include "ofa/tasks.hpp"

namespace ofa {

enum class OptimizerKind { sgd, adamw };
enum class GradMode { analytic, finite_difference };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);
std::string to_string(GradMode mode);
GradMode grad_mode_from_string(const std::string& name);

struct TrainConfig {
  double lambda1 = 1e-3;
  double lambda2 = 1e-3;
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double weight_decay = 1e-4;
  SharpnessConfig sharpness_cfg;
  GradMode grad_mode = GradMode::analytic;
  std::size_t train_tasks = 64;
  std::size_t eval_tasks = 64;

  void validate() const;
};

struct ObjectiveGradient {
  ObjectiveBreakdown value;
  /// d total / d gamma_t, one vector per layer.
  std::vector<Vec> total;
  /// Per-term gradients (unweighted), filled only when requested.
  std::vector<Vec> task;
  std::vector<Vec> step_ratio;
  std::vector<Vec> sharpness;
};

/// Reverse-mode gradient of total_objective with respect to every gain. The
/// Hutchinson probes come from the same substreams total_objective uses, so
/// the objective is a deterministic function of the gains.
ObjectiveGradient grad_objective(const Model& model, const PreconditionerSet& precond,
                                 std::span<const Example> batch, double lambda1,
                                 double lambda2, const SharpnessConfig& cfg,
                                 const RngStream& probes, bool per_term = false,
                                 std::size_t threads = 1);

/// Central-difference gradient of total_objective (probes held fixed).
std::vector<Vec> fd_grad_objective(const Model& model, const PreconditionerSet& precond,
                                   std::span<const Example> batch, double lambda1,
                                   double lambda2, const SharpnessConfig& cfg,
                                   const RngStream& probes, double h = 1e-5);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double weight_decay, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8);

  /// One in-place update of params given grads.
  void step(std::span<double> params, std::span<const double> grads);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  Vec m_, v_;
};

/// Fisher-Yates shuffle of [0, n) driven by rng.
std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng);

std::vector<Example> make_examples(const std::vector<TaskInstance>& tasks);

struct TrainReport {
  std::vector<ObjectiveBreakdown> train;
  std::vector<ObjectiveBreakdown> eval;
  /// Objective on both suites before the first update.
  ObjectiveBreakdown initial_train;
  ObjectiveBreakdown initial_eval;
  PreconditionerSet final_precond;
  std::size_t optimizer_steps = 0;
  double wall_seconds = 0.0;
};

/// Thrown when the objective stops being finite or exceeds 1e12 in magnitude.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& msg, TrainReport partial)
      : Error(Errc::diverged, msg), partial_(std::move(partial)) {}
  const TrainReport& partial() const noexcept { return partial_; }

 private:
  TrainReport partial_;
};

/// Stream layout under RngStream(cfg.seed): derive({1}) train suite,
/// derive({2}) eval suite, derive({3, epoch, step}) training probes,
/// derive({4, epoch}) shuffles, derive({5}) evaluation probes.
TrainReport train(const ModelConfig& model_cfg, const TaskSpec& train_spec,
                  const TaskSpec& eval_spec, const TrainConfig& cfg,
                  std::size_t threads = 1);

/// Plain objective over a whole suite with the fixed evaluation probes.
ObjectiveBreakdown evaluate_suite(const Model& model, const PreconditionerSet& precond,
                                  std::span<const Example> suite, const TrainConfig& cfg,
                                  std::size_t threads = 1);

/// Metrics CSV: epoch,task_loss,step_ratio,sharpness,total,eval_task_loss.
std::string metrics_csv(const TrainReport& report);

struct GradcheckTrial {
  std::size_t d = 0, n_demos = 0, layers = 0;
  PrecondMode mode = PrecondMode::layernorm_gain;
  double task_err = 0.0;
  double step_ratio_err = 0.0;
  double sharpness_err = 0.0;
  double total_err = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckTrial> trials;
  double worst_task = 0.0;
  double worst_step_ratio = 0.0;
  double worst_sharpness = 0.0;
  double worst_total = 0.0;
  /// Error against a finite difference whose probes are redrawn on every
  /// evaluation. Expected to be large.
  double resampled_probe_err = 0.0;

  double worst() const;
};

/// ||a - b|| / max(||a||, ||b||, 1e-12) over the flattened gradients.
double gradient_rel_error(const std::vector<Vec>& a, const std::vector<Vec>& b);

/// Compares analytic and central-difference gradients on `trials` random
/// configurations (d <= 4, layers in [2, 4], random gains and tasks) with
/// lambda weights and sharpness settings from cfg.
GradcheckReport gradcheck(const TrainConfig& cfg, std::size_t trials, std::uint64_t seed);

struct StepRatioFit {
  /// Per-step diagonal P_t = exp(theta_t).
  std::vector<Vec> initial_p;
  std::vector<Vec> learned_p;
  Vec initial_radii;
  Vec learned_radii;
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// Minimizes the step-ratio objective alone over per-step diagonal
/// preconditioners P_t = diag(exp(theta_t)), theta = 0 at start, for the
/// iteration z_{t+1} = z_t - eta P_t (H z_t - b) averaged over n_starts random
/// starting points. Adam with the given learning rate.
StepRatioFit fit_step_ratio_preconditioners(const QuadraticProblem& q, double eta,
                                            std::size_t layers, std::size_t opt_steps,
                                            double lr, std::size_t n_starts, RngStream rng);

}  // namespace ofa
