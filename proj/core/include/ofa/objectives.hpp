#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ofa/model.hpp"
#include "ofa/numerics.hpp"
#include "ofa/rng.hpp"

namespace ofa {

/// Denominator floor for step ratios, so frozen layers do not divide by zero.
inline constexpr double kStepRatioFloor = 1e-8;

struct SharpnessConfig {
  /// Probe scale. With rel_scale the effective scale is epsilon * ||Z_t||_F.
  double epsilon = 1e-3;
  std::size_t n_probes = 8;
  bool rel_scale = true;

  void validate() const;
};

struct ObjectiveBreakdown {
  double task_loss = 0.0;
  double step_ratio = 0.0;
  double sharpness = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double total = 0.0;
};

/// task + lambda1 * step_ratio + lambda2 * sharpness, evaluated in that order.
double compose_total(double task, double step_ratio, double sharpness, double lambda1,
                     double lambda2);

struct StepRatioTerm {
  double numerator = 0.0;
  double denominator = 0.0;
  double ratio = 0.0;
  bool guarded = false;
};

/// Terms t = 1..T-1 of ||Z_t - Z_{t+1}|| / max(||Z_t - Z_{t-1}||, floor).
std::vector<StepRatioTerm> step_ratio_terms(std::span<const Mat> states);
double step_ratio_loss(std::span<const Mat> states);
double step_ratio_loss(const Trajectory& traj);

/// A layer seen as an implicit preconditioned gradient step, which is all the
/// Hutchinson estimator needs to know about it.
class ImplicitStep {
 public:
  virtual ~ImplicitStep() = default;
  /// f_t(z) - z, identified with -P_t grad L(z).
  virtual Mat delta(const Mat& z) const = 0;
  /// P_t v.
  virtual Mat precondition(const Mat& v) const = 0;
};

/// Layer t of a model. The probe direction uses sigma_t of the unperturbed
/// input; delta() recomputes normalization for whatever input it gets.
class ModelLayerStep final : public ImplicitStep {
 public:
  ModelLayerStep(const Model& model, const PreconditionerSet& precond, std::size_t t,
                 const Mat& z_t);

  Mat delta(const Mat& z) const override;
  Mat precondition(const Mat& v) const override;
  double baseline_sigma() const noexcept { return sigma_; }

 private:
  const Model& model_;
  std::span<const double> gains_;
  double sigma_;
};

/// z -> z - P (H z - b) on column vectors: an exactly quadratic layer with
/// L(z) = 1/2 z^T H z - b^T z and diagonal preconditioner P.
class QuadraticStep final : public ImplicitStep {
 public:
  QuadraticStep(Mat hessian, Vec linear, Vec precond_diag);

  Mat delta(const Mat& z) const override;
  Mat precondition(const Mat& v) const override;

 private:
  Mat h_;
  Vec b_;
  Vec p_;
};

struct TraceEstimate {
  double value = 0.0;
  /// Sample standard deviation of the per-probe values over sqrt(N); zero
  /// when N == 1.
  double std_error = 0.0;
  std::size_t n_probes = 0;
};

/// Hutchinson estimate of tr(P H P^T):
///   (1/eps) (1/N) sum_i < nu_i, -(delta(z + eps P nu_i) - delta(z)) >
/// with nu_i ~ N(0, I) of the shape of z drawn sequentially from rng. The
/// negation converts observed deltas (-P grad L) back to P grad L.
TraceEstimate hutchinson_trace(const ImplicitStep& step, const Mat& z,
                               const SharpnessConfig& cfg, RngStream& rng);

TraceEstimate hutchinson_layer_trace(const Model& model, const PreconditionerSet& precond,
                                     const Mat& z_t, std::size_t t,
                                     const SharpnessConfig& cfg, RngStream& rng);

/// Trace estimates for the interior layers t = 1..T-1 of a completed forward
/// pass. Layer t draws its probes from stream.derive({t}).
std::vector<TraceEstimate> interior_layer_traces(const Model& model,
                                                 const PreconditionerSet& precond,
                                                 const Trajectory& traj,
                                                 const SharpnessConfig& cfg,
                                                 const RngStream& stream);

/// Sum of softplus(trace_t); negative traces still contribute.
double sharpness_penalty(std::span<const double> traces);

/// Squared error for regression, softmax cross-entropy over the class logits
/// for classification (target is the class index).
double task_loss(std::span<const double> pred, double target, TaskKind kind);

struct Example {
  Mat prompt;
  double target = 0.0;
};

/// Unweighted terms of one example; example probes come from `probes`
/// directly. total and the lambdas are left at zero.
ObjectiveBreakdown example_terms(const Model& model, const PreconditionerSet& precond,
                                 const Example& example, const SharpnessConfig& cfg,
                                 const RngStream& probes);

/// Batch means of per-example terms, summed in index order, then composed.
ObjectiveBreakdown reduce_terms(std::span<const ObjectiveBreakdown> per_example,
                                double lambda1, double lambda2);

/// Throws for negative lambdas or a step-ratio weight on a one-layer model.
void check_objective_args(const ModelConfig& mc, double lambda1, double lambda2);

/// Batch means of each term. Example b draws its probes from
/// probes.derive({b}); both sums run over the interior layers t = 1..T-1.
ObjectiveBreakdown total_objective(const Model& model, const PreconditionerSet& precond,
                                   std::span<const Example> batch, double lambda1,
                                   double lambda2, const SharpnessConfig& cfg,
                                   const RngStream& probes);

}  // namespace ofa
