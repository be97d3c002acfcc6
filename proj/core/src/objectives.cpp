#include "ofa/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "ofa/error.hpp"

namespace ofa {

void SharpnessConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw Error(Errc::invalid_spec, "sharpness epsilon must be > 0");
  }
  if (n_probes < 1) throw Error(Errc::invalid_spec, "sharpness n_probes must be >= 1");
}

double compose_total(double task, double step_ratio, double sharpness, double lambda1,
                     double lambda2) {
  return task + lambda1 * step_ratio + lambda2 * sharpness;
}

std::vector<StepRatioTerm> step_ratio_terms(std::span<const Mat> states) {
  if (states.size() < 3) {
    throw Error(Errc::too_few_layers, "step ratio needs at least two layers");
  }
  std::vector<StepRatioTerm> terms;
  terms.reserve(states.size() - 2);
  for (std::size_t t = 1; t + 1 < states.size(); ++t) {
    StepRatioTerm term;
    term.numerator = frob_norm(states[t] - states[t + 1]);
    const double prev = frob_norm(states[t] - states[t - 1]);
    term.guarded = !(prev > kStepRatioFloor);
    term.denominator = term.guarded ? kStepRatioFloor : prev;
    term.ratio = term.numerator / term.denominator;
    terms.push_back(term);
  }
  return terms;
}

double step_ratio_loss(std::span<const Mat> states) {
  double total = 0.0;
  for (const StepRatioTerm& term : step_ratio_terms(states)) total += term.ratio;
  return total;
}

double step_ratio_loss(const Trajectory& traj) { return step_ratio_loss(traj.states); }

ModelLayerStep::ModelLayerStep(const Model& model, const PreconditionerSet& precond,
                               std::size_t t, const Mat& z_t)
    : model_(model), gains_(precond.gains.at(t)) {
  sigma_ = normalize_update(model.raw_update(z_t), gains_, model.config()).sigma;
}

Mat ModelLayerStep::delta(const Mat& z) const {
  return normalize_update(model_.raw_update(z), gains_, model_.config()).applied_update;
}

Mat ModelLayerStep::precondition(const Mat& v) const {
  return apply_preconditioner(v, gains_, sigma_, model_.config());
}

QuadraticStep::QuadraticStep(Mat hessian, Vec linear, Vec precond_diag)
    : h_(std::move(hessian)), b_(std::move(linear)), p_(std::move(precond_diag)) {
  if (h_.rows() != h_.cols() || b_.size() != h_.rows() || p_.size() != h_.rows()) {
    throw Error(Errc::shape_mismatch, "quadratic step dimensions disagree");
  }
}

Mat QuadraticStep::delta(const Mat& z) const {
  if (z.rows() != h_.rows() || z.cols() != 1) {
    throw Error(Errc::shape_mismatch, "quadratic step expects a column vector");
  }
  Mat g = matmul(h_, z);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, 0) = -p_[i] * (g(i, 0) - b_[i]);
  return g;
}

Mat QuadraticStep::precondition(const Mat& v) const {
  Mat out = v;
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, 0) *= p_[i];
  return out;
}

TraceEstimate hutchinson_trace(const ImplicitStep& step, const Mat& z,
                               const SharpnessConfig& cfg, RngStream& rng) {
  cfg.validate();
  double eps = cfg.epsilon;
  if (cfg.rel_scale) {
    const double zn = frob_norm(z);
    if (zn > 0.0) eps *= zn;
  }
  const Mat base = step.delta(z);
  std::vector<double> samples(cfg.n_probes);
  for (std::size_t i = 0; i < cfg.n_probes; ++i) {
    const Mat nu = rng.normal_mat(z.rows(), z.cols());
    const Mat shifted = z + step.precondition(nu) * eps;
    const Mat perturbed = step.delta(shifted);
    samples[i] = -frob_inner(nu, perturbed - base) / eps;
  }
  TraceEstimate est;
  est.n_probes = cfg.n_probes;
  double s = 0.0;
  for (double x : samples) s += x;
  est.value = s / static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double x : samples) ss += (x - est.value) * (x - est.value);
    const double var = ss / static_cast<double>(samples.size() - 1);
    est.std_error = std::sqrt(var / static_cast<double>(samples.size()));
  }
  if (!std::isfinite(est.value)) throw Error(Errc::non_finite, "trace estimate not finite");
  return est;
}

TraceEstimate hutchinson_layer_trace(const Model& model, const PreconditionerSet& precond,
                                     const Mat& z_t, std::size_t t,
                                     const SharpnessConfig& cfg, RngStream& rng) {
  const ModelLayerStep step(model, precond, t, z_t);
  return hutchinson_trace(step, z_t, cfg, rng);
}

std::vector<TraceEstimate> interior_layer_traces(const Model& model,
                                                 const PreconditionerSet& precond,
                                                 const Trajectory& traj,
                                                 const SharpnessConfig& cfg,
                                                 const RngStream& stream) {
  const std::size_t layers = model.config().layers;
  std::vector<TraceEstimate> out;
  for (std::size_t t = 1; t < layers; ++t) {
    RngStream rng = stream.derive({t});
    out.push_back(hutchinson_layer_trace(model, precond, traj.states[t], t, cfg, rng));
  }
  return out;
}

double sharpness_penalty(std::span<const double> traces) {
  double total = 0.0;
  for (double tr : traces) {
    if (!std::isfinite(tr)) throw Error(Errc::non_finite, "trace is not finite");
    total += softplus(tr);
  }
  return total;
}

double task_loss(std::span<const double> pred, double target, TaskKind kind) {
  if (kind == TaskKind::regression) {
    if (pred.size() != 1) throw Error(Errc::shape_mismatch, "regression expects one output");
    const double e = pred[0] - target;
    return e * e;
  }
  if (pred.size() < 2) throw Error(Errc::shape_mismatch, "classification expects >= 2 logits");
  const auto cls = static_cast<std::size_t>(target);
  if (target < 0.0 || cls >= pred.size() || static_cast<double>(cls) != target) {
    throw Error(Errc::shape_mismatch, "class target out of range");
  }
  const double m = *std::max_element(pred.begin(), pred.end());
  double s = 0.0;
  for (double x : pred) s += std::exp(x - m);
  return m + std::log(s) - pred[cls];
}

ObjectiveBreakdown example_terms(const Model& model, const PreconditionerSet& precond,
                                 const Example& example, const SharpnessConfig& cfg,
                                 const RngStream& probes) {
  const ModelConfig& mc = model.config();
  ObjectiveBreakdown out;
  const Trajectory traj = forward(example.prompt, model, precond);
  out.task_loss = task_loss(predict(traj, mc), example.target, mc.kind);
  if (mc.layers >= 2) out.step_ratio = step_ratio_loss(traj);
  std::vector<double> traces;
  for (const TraceEstimate& e : interior_layer_traces(model, precond, traj, cfg, probes)) {
    traces.push_back(e.value);
  }
  out.sharpness = sharpness_penalty(traces);
  return out;
}

ObjectiveBreakdown reduce_terms(std::span<const ObjectiveBreakdown> per_example,
                                double lambda1, double lambda2) {
  if (per_example.empty()) throw Error(Errc::invalid_spec, "objective needs a non-empty batch");
  ObjectiveBreakdown out;
  out.lambda1 = lambda1;
  out.lambda2 = lambda2;
  for (const ObjectiveBreakdown& e : per_example) {
    out.task_loss += e.task_loss;
    out.step_ratio += e.step_ratio;
    out.sharpness += e.sharpness;
  }
  const double inv = 1.0 / static_cast<double>(per_example.size());
  out.task_loss *= inv;
  out.step_ratio *= inv;
  out.sharpness *= inv;
  out.total = compose_total(out.task_loss, out.step_ratio, out.sharpness, lambda1, lambda2);
  if (!std::isfinite(out.total)) throw Error(Errc::non_finite, "objective is not finite");
  return out;
}

void check_objective_args(const ModelConfig& mc, double lambda1, double lambda2) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw Error(Errc::invalid_spec, "lambda weights must be >= 0");
  }
  // A single layer has no interior terms; only a zero step-ratio weight makes sense then.
  if (mc.layers < 2 && lambda1 > 0.0) {
    throw Error(Errc::too_few_layers, "step-ratio penalty needs at least two layers");
  }
}

ObjectiveBreakdown total_objective(const Model& model, const PreconditionerSet& precond,
                                   std::span<const Example> batch, double lambda1,
                                   double lambda2, const SharpnessConfig& cfg,
                                   const RngStream& probes) {
  check_objective_args(model.config(), lambda1, lambda2);
  if (batch.empty()) throw Error(Errc::invalid_spec, "objective needs a non-empty batch");
  std::vector<ObjectiveBreakdown> terms;
  terms.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    terms.push_back(example_terms(model, precond, batch[b], cfg, probes.derive({b})));
  }
  return reduce_terms(terms, lambda1, lambda2);
}

}  // namespace ofa
