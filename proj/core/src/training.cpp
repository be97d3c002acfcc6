#include "ofa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ofa/autodiff.hpp"
#include "ofa/serialization.hpp"

namespace ofa {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adamw";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adamw") return OptimizerKind::adamw;
  throw Error(Errc::invalid_spec, "unknown optimizer '" + name + "'");
}

std::string to_string(GradMode mode) {
  return mode == GradMode::analytic ? "analytic" : "finite_difference";
}

GradMode grad_mode_from_string(const std::string& name) {
  if (name == "analytic") return GradMode::analytic;
  if (name == "finite_difference") return GradMode::finite_difference;
  throw Error(Errc::invalid_spec, "unknown grad_mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) {
    throw Error(Errc::invalid_spec, "lambda1 must be >= 0");
  }
  if (!(lambda2 >= 0.0) || !std::isfinite(lambda2)) {
    throw Error(Errc::invalid_spec, "lambda2 must be >= 0");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(Errc::invalid_spec, "lr must be >= 0");
  if (epochs < 1) throw Error(Errc::invalid_spec, "epochs must be >= 1");
  if (batch_size < 1) throw Error(Errc::invalid_spec, "batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw Error(Errc::invalid_spec, "weight_decay must be >= 0");
  if (train_tasks < 1) throw Error(Errc::invalid_spec, "train_tasks must be >= 1");
  if (eval_tasks < 1) throw Error(Errc::invalid_spec, "eval_tasks must be >= 1");
  sharpness_cfg.validate();
}

// ---------------------------------------------------------------------------
// Reverse-mode objective. Every node mirrors a step of the plain path in
// model.cpp and objectives.cpp, including the probe draws.

namespace {

struct Graph {
  ad::Tape& tape;
  const ModelConfig& cfg;
  ad::Var value;
  ad::Var key_query;
  ad::Var mask;
};

struct AdLayer {
  ad::Var applied;
  ad::Var sigma;
};

AdLayer ad_layer(const Graph& g, const ad::Var& z, const ad::Var& gain) {
  const ad::Var vzm = ad::hadamard(ad::matmul(g.value, z), g.mask);
  const ad::Var raw = ad::matmul(ad::matmul(vzm, ad::transpose(z)), ad::matmul(g.key_query, z));
  if (g.cfg.precond_mode == PrecondMode::identity) return {raw, ad::Var()};
  const ad::Var mu = ad::mean(raw);
  const ad::Var centered = ad::sub_scalar(raw, mu);
  const ad::Var sigma =
      ad::floor_max(ad::sqrt(ad::mean(ad::square(centered))), g.cfg.sigma_floor);
  const ad::Var& shifted = g.cfg.mean_subtract ? centered : raw;
  return {ad::row_scale(ad::div(shifted, sigma), gain), sigma};
}

struct AdTerms {
  ad::Var task;
  ad::Var step_ratio;
  ad::Var sharpness;
};

AdTerms build_example(const Graph& g, const std::vector<ad::Var>& gains, const Example& ex,
                      const SharpnessConfig& sc, const RngStream& probes) {
  ad::Tape& tape = g.tape;
  const ModelConfig& cfg = g.cfg;
  const std::size_t layers = cfg.layers;

  std::vector<ad::Var> z{tape.constant(ex.prompt)};
  std::vector<AdLayer> steps;
  for (std::size_t t = 0; t < layers; ++t) {
    steps.push_back(ad_layer(g, z.back(), gains[t]));
    z.push_back(ad::add(z.back(), steps.back().applied));
  }

  AdTerms out;
  if (cfg.kind == TaskKind::regression) {
    const ad::Var pred = ad::neg(ad::entry(z.back(), cfg.d, cfg.n_demos));
    out.task = ad::square(ad::sub(pred, tape.constant(ex.target)));
  } else {
    const ad::Var logits = ad::neg(ad::column_slice(z.back(), cfg.d, cfg.n_classes, cfg.n_demos));
    const auto cls = static_cast<std::size_t>(ex.target);
    out.task = ad::sub(ad::logsumexp(logits), ad::entry(logits, cls, 0));
  }

  out.step_ratio = tape.constant(0.0);
  if (layers >= 2) {
    for (std::size_t t = 1; t < layers; ++t) {
      const ad::Var num = ad::frob_norm(ad::sub(z[t], z[t + 1]));
      const ad::Var den = ad::floor_max(ad::frob_norm(ad::sub(z[t], z[t - 1])), kStepRatioFloor);
      out.step_ratio = ad::add(out.step_ratio, ad::div(num, den));
    }
  }

  out.sharpness = tape.constant(0.0);
  for (std::size_t t = 1; t < layers; ++t) {
    RngStream rng = probes.derive({t});
    ad::Var eps = tape.constant(sc.epsilon);
    if (sc.rel_scale && frob_norm(z[t].value()) > 0.0) {
      eps = ad::scale(ad::frob_norm(z[t]), sc.epsilon);
    }
    const ad::Var& base = steps[t].applied;
    ad::Var acc = tape.constant(0.0);
    for (std::size_t i = 0; i < sc.n_probes; ++i) {
      const ad::Var nu = tape.constant(rng.normal_mat(cfg.rows(), cfg.cols()));
      ad::Var pnu = nu;
      if (cfg.precond_mode == PrecondMode::layernorm_gain) {
        pnu = ad::div(ad::row_scale(nu, gains[t]), steps[t].sigma);
      }
      const ad::Var shifted = ad::add(z[t], ad::mul(pnu, eps));
      const ad::Var perturbed = ad_layer(g, shifted, gains[t]).applied;
      const ad::Var sample = ad::neg(ad::div(ad::frob_inner(nu, ad::sub(perturbed, base)), eps));
      acc = ad::add(acc, sample);
    }
    const ad::Var trace = ad::scale(acc, 1.0 / static_cast<double>(sc.n_probes));
    out.sharpness = ad::add(out.sharpness, ad::softplus(trace));
  }
  return out;
}

struct ExampleGrad {
  ObjectiveBreakdown terms;
  std::vector<Vec> total, task, step_ratio, sharpness;
};

std::vector<Vec> to_vecs(const std::vector<Mat>& mats) {
  std::vector<Vec> out;
  out.reserve(mats.size());
  for (const Mat& m : mats) out.emplace_back(m.data().begin(), m.data().end());
  return out;
}

ExampleGrad example_grad(const Model& model, const PreconditionerSet& precond,
                         const Example& ex, double lambda1, double lambda2,
                         const SharpnessConfig& sc, const RngStream& probes, bool per_term) {
  const ModelConfig& cfg = model.config();
  ad::Tape tape;
  Mat mask(cfg.rows(), cfg.cols());
  for (std::size_t r = 0; r < cfg.rows(); ++r)
    for (std::size_t c = 0; c < cfg.cols(); ++c) mask(r, c) = model.weights().demo_mask[c];
  const Graph g{tape, cfg, tape.constant(model.weights().value),
                tape.constant(model.weights().key_query), tape.constant(std::move(mask))};
  std::vector<ad::Var> gains;
  for (const Vec& gt : precond.gains) gains.push_back(tape.variable(Mat::column(gt)));

  const AdTerms terms = build_example(g, gains, ex, sc, probes);
  const ad::Var total = ad::add(ad::add(terms.task, ad::scale(terms.step_ratio, lambda1)),
                                ad::scale(terms.sharpness, lambda2));
  ExampleGrad out;
  out.terms.task_loss = terms.task.scalar();
  out.terms.step_ratio = terms.step_ratio.scalar();
  out.terms.sharpness = terms.sharpness.scalar();
  out.total = to_vecs(tape.gradient(total, gains));
  if (per_term) {
    out.task = to_vecs(tape.gradient(terms.task, gains));
    out.step_ratio = to_vecs(tape.gradient(terms.step_ratio, gains));
    out.sharpness = to_vecs(tape.gradient(terms.sharpness, gains));
  }
  return out;
}

void accumulate(std::vector<Vec>& acc, const std::vector<Vec>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t t = 0; t < acc.size(); ++t)
    for (std::size_t i = 0; i < acc[t].size(); ++i) acc[t][i] += g[t][i];
}

void scale_all(std::vector<Vec>& v, double s) {
  for (Vec& x : v)
    for (double& e : x) e *= s;
}

}  // namespace

ObjectiveGradient grad_objective(const Model& model, const PreconditionerSet& precond,
                                 std::span<const Example> batch, double lambda1,
                                 double lambda2, const SharpnessConfig& cfg,
                                 const RngStream& probes, bool per_term, std::size_t threads) {
  check_objective_args(model.config(), lambda1, lambda2);
  cfg.validate();
  precond.validate(model.config());
  if (batch.empty()) throw Error(Errc::invalid_spec, "objective needs a non-empty batch");

  std::vector<ExampleGrad> per(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t b) {
    per[b] = example_grad(model, precond, batch[b], lambda1, lambda2, cfg, probes.derive({b}),
                          per_term);
  });

  ObjectiveGradient out;
  std::vector<ObjectiveBreakdown> terms;
  for (ExampleGrad& e : per) {
    terms.push_back(e.terms);
    accumulate(out.total, e.total);
    if (per_term) {
      accumulate(out.task, e.task);
      accumulate(out.step_ratio, e.step_ratio);
      accumulate(out.sharpness, e.sharpness);
    }
  }
  out.value = reduce_terms(terms, lambda1, lambda2);
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale_all(out.total, inv);
  scale_all(out.task, inv);
  scale_all(out.step_ratio, inv);
  scale_all(out.sharpness, inv);
  for (const Vec& g : out.total)
    if (!all_finite(g)) throw Error(Errc::non_finite, "gradient is not finite");
  return out;
}

std::vector<Vec> fd_grad_objective(const Model& model, const PreconditionerSet& precond,
                                   std::span<const Example> batch, double lambda1,
                                   double lambda2, const SharpnessConfig& cfg,
                                   const RngStream& probes, double h) {
  const ModelConfig& mc = model.config();
  const ScalarFn f = [&](std::span<const double> p) {
    return total_objective(model, PreconditionerSet::unflatten(p, mc), batch, lambda1, lambda2,
                           cfg, probes)
        .total;
  };
  const Vec g = central_fd_grad(f, precond.flatten(), h);
  return PreconditionerSet::unflatten(g, mc).gains;
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double lr, double weight_decay, double beta1,
                     double beta2, double eps)
    : kind_(kind), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) {
    throw Error(Errc::shape_mismatch, "parameter and gradient sizes differ");
  }
  ++t_;
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= lr_ * (grads[i] + wd_ * params[i]);
    }
    return;
  }
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr_ * wd_ * params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::vector<Example> make_examples(const std::vector<TaskInstance>& tasks) {
  std::vector<Example> out;
  out.reserve(tasks.size());
  for (const TaskInstance& t : tasks) out.push_back(Example{embed_prompt(t), t.y_star});
  return out;
}

ObjectiveBreakdown evaluate_suite(const Model& model, const PreconditionerSet& precond,
                                  std::span<const Example> suite, const TrainConfig& cfg,
                                  std::size_t threads) {
  check_objective_args(model.config(), cfg.lambda1, cfg.lambda2);
  const RngStream probes = RngStream(cfg.seed).derive({5});
  std::vector<ObjectiveBreakdown> terms(suite.size());
  parallel_for(suite.size(), threads, [&](std::size_t i) {
    terms[i] = example_terms(model, precond, suite[i], cfg.sharpness_cfg, probes.derive({i}));
  });
  return reduce_terms(terms, cfg.lambda1, cfg.lambda2);
}

namespace {

bool diverged(const ObjectiveBreakdown& b) {
  return !std::isfinite(b.total) || std::abs(b.total) > 1e12;
}

}  // namespace

TrainReport train(const ModelConfig& model_cfg, const TaskSpec& train_spec,
                  const TaskSpec& eval_spec, const TrainConfig& cfg, std::size_t threads) {
  const auto started = std::chrono::steady_clock::now();
  model_cfg.validate();
  cfg.validate();
  train_spec.validate();
  eval_spec.validate();
  if (train_spec.d != model_cfg.d || train_spec.n_demos != model_cfg.n_demos ||
      train_spec.kind != model_cfg.kind || eval_spec.d != model_cfg.d ||
      eval_spec.n_demos != model_cfg.n_demos || eval_spec.kind != model_cfg.kind) {
    throw Error(Errc::invalid_spec, "task specs do not match the model config");
  }

  const Model model(model_cfg);
  const RngStream root(cfg.seed);
  const std::vector<Example> train_set =
      make_examples(sample_suite(train_spec, cfg.train_tasks, root.derive({1})));
  const std::vector<Example> eval_set =
      make_examples(sample_suite(eval_spec, cfg.eval_tasks, root.derive({2})));

  TrainReport report;
  report.final_precond = PreconditionerSet::ones(model_cfg);
  auto finish = [&] {
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  try {
    report.initial_train = evaluate_suite(model, report.final_precond, train_set, cfg, threads);
    report.initial_eval = evaluate_suite(model, report.final_precond, eval_set, cfg, threads);
  } catch (const Error& e) {
    if (e.code() != Errc::non_finite) throw;
    finish();
    throw DivergedError(e.what(), report);
  }
  if (diverged(report.initial_train)) {
    finish();
    throw DivergedError("initial objective out of range", report);
  }

  Optimizer opt(cfg.optimizer, cfg.lr, cfg.weight_decay);
  Vec params = report.final_precond.flatten();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    try {
      RngStream shuffle_rng = root.derive({4, epoch});
      const std::vector<std::size_t> order = shuffled_indices(train_set.size(), shuffle_rng);
      std::size_t step = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        std::vector<Example> batch;
        for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
        const RngStream probes = root.derive({3, epoch, step});
        std::vector<Vec> grads;
        if (cfg.grad_mode == GradMode::analytic) {
          grads = grad_objective(model, report.final_precond, batch, cfg.lambda1, cfg.lambda2,
                                 cfg.sharpness_cfg, probes, false, threads)
                      .total;
        } else {
          grads = fd_grad_objective(model, report.final_precond, batch, cfg.lambda1,
                                    cfg.lambda2, cfg.sharpness_cfg, probes);
        }
        Vec flat;
        for (const Vec& g : grads) flat.insert(flat.end(), g.begin(), g.end());
        opt.step(params, flat);
        if (!all_finite(params)) throw Error(Errc::non_finite, "gains became non-finite");
        report.final_precond = PreconditionerSet::unflatten(params, model_cfg);
        ++report.optimizer_steps;
      }
      const ObjectiveBreakdown tb = evaluate_suite(model, report.final_precond, train_set, cfg,
                                                   threads);
      const ObjectiveBreakdown eb = evaluate_suite(model, report.final_precond, eval_set, cfg,
                                                   threads);
      if (diverged(tb)) throw Error(Errc::non_finite, "objective magnitude exceeded 1e12");
      report.train.push_back(tb);
      report.eval.push_back(eb);
    } catch (const Error& e) {
      if (e.code() != Errc::non_finite) throw;
      finish();
      throw DivergedError("diverged in epoch " + std::to_string(epoch) + ": " + e.what(),
                          report);
    }
  }
  finish();
  return report;
}

std::string metrics_csv(const TrainReport& report) {
  std::string s = "epoch,task_loss,step_ratio,sharpness,total,eval_task_loss\n";
  for (std::size_t e = 0; e < report.train.size(); ++e) {
    const ObjectiveBreakdown& b = report.train[e];
    s += std::to_string(e + 1) + ',' + format_double(b.task_loss) + ',' +
         format_double(b.step_ratio) + ',' + format_double(b.sharpness) + ',' +
         format_double(b.total) + ',' + format_double(report.eval[e].task_loss) + '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------

double GradcheckReport::worst() const {
  return std::max({worst_task, worst_step_ratio, worst_sharpness, worst_total});
}

double gradient_rel_error(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.size() != b.size()) throw Error(Errc::shape_mismatch, "gradient layouts differ");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].size() != b[t].size()) throw Error(Errc::shape_mismatch, "gradient layouts differ");
    for (std::size_t i = 0; i < a[t].size(); ++i) {
      diff += (a[t][i] - b[t][i]) * (a[t][i] - b[t][i]);
      na += a[t][i] * a[t][i];
      nb += b[t][i] * b[t][i];
    }
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

namespace {

struct FdTerms {
  std::vector<Vec> task, step_ratio, sharpness, total;
};

// Central differences of every term at once; `probes_for(k)` picks the probe
// stream of the k-th objective evaluation.
FdTerms fd_terms(const Model& model, const PreconditionerSet& precond,
                 std::span<const Example> batch, double lambda1, double lambda2,
                 const SharpnessConfig& sc, const std::function<RngStream(std::size_t)>& probes_for,
                 double h) {
  const ModelConfig& mc = model.config();
  const Vec p0 = precond.flatten();
  Vec gt(p0.size()), gr(p0.size()), gs(p0.size()), gtot(p0.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    Vec p = p0;
    p[i] = p0[i] + h;
    const ObjectiveBreakdown up = total_objective(model, PreconditionerSet::unflatten(p, mc),
                                                  batch, lambda1, lambda2, sc, probes_for(k++));
    p[i] = p0[i] - h;
    const ObjectiveBreakdown dn = total_objective(model, PreconditionerSet::unflatten(p, mc),
                                                  batch, lambda1, lambda2, sc, probes_for(k++));
    gt[i] = (up.task_loss - dn.task_loss) / (2.0 * h);
    gr[i] = (up.step_ratio - dn.step_ratio) / (2.0 * h);
    gs[i] = (up.sharpness - dn.sharpness) / (2.0 * h);
    gtot[i] = (up.total - dn.total) / (2.0 * h);
  }
  FdTerms out;
  out.task = PreconditionerSet::unflatten(gt, mc).gains;
  out.step_ratio = PreconditionerSet::unflatten(gr, mc).gains;
  out.sharpness = PreconditionerSet::unflatten(gs, mc).gains;
  out.total = PreconditionerSet::unflatten(gtot, mc).gains;
  return out;
}

}  // namespace

GradcheckReport gradcheck(const TrainConfig& cfg, std::size_t trials, std::uint64_t seed) {
  cfg.validate();
  constexpr double kH = 1e-5;
  const RngStream root(seed, 0x67c);
  GradcheckReport report;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    RngStream rng = root.derive({trial});
    ModelConfig mc;
    mc.d = 1 + rng.below(4);
    mc.n_demos = 2 + rng.below(5);
    mc.layers = 2 + rng.below(3);
    mc.eta = 0.05 + 0.15 * rng.uniform();
    mc.precond_mode = PrecondMode::layernorm_gain;
    mc.mean_subtract = rng.below(2) == 1;
    mc.kind = trial % 4 == 3 ? TaskKind::classification : TaskKind::regression;
    mc.n_classes = 2 + rng.below(2);

    TaskSpec spec;
    spec.kind = mc.kind;
    spec.d = mc.d;
    spec.n_demos = mc.n_demos;
    spec.n_classes = mc.n_classes;
    spec.cov_spectrum.assign(mc.d, 1.0);
    for (double& v : spec.cov_spectrum) v = 0.5 + rng.uniform();
    spec.noise_std = 0.1;
    const std::vector<Example> batch = make_examples(sample_suite(spec, 2, rng.derive({1})));

    PreconditionerSet precond = PreconditionerSet::ones(mc);
    for (Vec& g : precond.gains)
      for (double& x : g) x = 0.5 + rng.uniform();

    const Model model(mc);
    const RngStream probes = rng.derive({2});
    const ObjectiveGradient an = grad_objective(model, precond, batch, cfg.lambda1, cfg.lambda2,
                                                cfg.sharpness_cfg, probes, true);
    const FdTerms fd = fd_terms(model, precond, batch, cfg.lambda1, cfg.lambda2,
                                cfg.sharpness_cfg, [&](std::size_t) { return probes; }, kH);

    GradcheckTrial t;
    t.d = mc.d;
    t.n_demos = mc.n_demos;
    t.layers = mc.layers;
    t.mode = mc.precond_mode;
    t.task_err = gradient_rel_error(an.task, fd.task);
    t.step_ratio_err = gradient_rel_error(an.step_ratio, fd.step_ratio);
    t.sharpness_err = gradient_rel_error(an.sharpness, fd.sharpness);
    t.total_err = gradient_rel_error(an.total, fd.total);
    report.worst_task = std::max(report.worst_task, t.task_err);
    report.worst_step_ratio = std::max(report.worst_step_ratio, t.step_ratio_err);
    report.worst_sharpness = std::max(report.worst_sharpness, t.sharpness_err);
    report.worst_total = std::max(report.worst_total, t.total_err);
    report.trials.push_back(t);

    if (trial == 0) {
      // Negative control: every objective evaluation sees fresh probes.
      const double l2 = cfg.lambda2 > 0.0 ? cfg.lambda2 : 0.01;
      const ObjectiveGradient an2 =
          grad_objective(model, precond, batch, cfg.lambda1, l2, cfg.sharpness_cfg, probes);
      const FdTerms noisy =
          fd_terms(model, precond, batch, cfg.lambda1, l2, cfg.sharpness_cfg,
                   [&](std::size_t k) { return rng.derive({3, k}); }, kH);
      report.resampled_probe_err = gradient_rel_error(an2.total, noisy.total);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

StepRatioFit fit_step_ratio_preconditioners(const QuadraticProblem& q, double eta,
                                            std::size_t layers, std::size_t opt_steps,
                                            double lr, std::size_t n_starts, RngStream rng) {
  if (layers < 2) throw Error(Errc::too_few_layers, "step ratio needs at least two layers");
  if (n_starts < 1) throw Error(Errc::invalid_spec, "need at least one starting point");
  const std::size_t n = q.hessian.rows();
  std::vector<Mat> starts;
  for (std::size_t s = 0; s < n_starts; ++s) {
    Vec z0 = rng.normal_vec(n);
    for (std::size_t i = 0; i < n; ++i) z0[i] += q.optimum[i];
    starts.push_back(Mat::column(z0));
  }

  // Mean step-ratio objective over all starts, and its gradient in theta.
  auto objective = [&](const std::vector<Vec>& theta, std::vector<Vec>* grad) {
    ad::Tape tape;
    std::vector<ad::Var> th;
    for (const Vec& v : theta) th.push_back(tape.variable(Mat::column(v)));
    std::vector<ad::Var> p;
    for (const ad::Var& v : th) {
      Mat e = v.value();
      for (double& x : e.data()) x = std::exp(x);
      // d exp(theta) / d theta = exp(theta).
      p.push_back(tape.record(e, {v}, [v, e](const Mat& up, ad::Tape& tp) {
        tp.accumulate(v, hadamard(up, e));
      }));
    }
    const ad::Var h = tape.constant(q.hessian);
    const ad::Var b = tape.constant(Mat::column(q.linear));
    ad::Var total = tape.constant(0.0);
    for (const Mat& z0 : starts) {
      std::vector<ad::Var> z{tape.constant(z0)};
      for (std::size_t t = 0; t < layers; ++t) {
        const ad::Var g = ad::sub(ad::matmul(h, z.back()), b);
        z.push_back(ad::sub(z.back(), ad::scale(ad::row_scale(g, p[t]), eta)));
      }
      for (std::size_t t = 1; t < layers; ++t) {
        const ad::Var num = ad::frob_norm(ad::sub(z[t], z[t + 1]));
        const ad::Var den =
            ad::floor_max(ad::frob_norm(ad::sub(z[t], z[t - 1])), kStepRatioFloor);
        total = ad::add(total, ad::div(num, den));
      }
    }
    total = ad::scale(total, 1.0 / static_cast<double>(starts.size()));
    if (grad != nullptr) *grad = to_vecs(tape.gradient(total, th));
    return total.scalar();
  };
  auto to_p = [](const std::vector<Vec>& theta) {
    std::vector<Vec> p = theta;
    for (Vec& v : p)
      for (double& x : v) x = std::exp(x);
    return p;
  };
  auto radii = [&](const std::vector<Vec>& p) {
    Vec r;
    for (const Vec& pt : p) r.push_back(step_operator_radius(q.hessian, pt, eta));
    return r;
  };

  std::vector<Vec> theta(layers, Vec(n, 0.0));
  StepRatioFit fit;
  fit.initial_p = to_p(theta);
  fit.initial_radii = radii(fit.initial_p);
  fit.initial_objective = objective(theta, nullptr);

  Optimizer opt(OptimizerKind::adamw, lr, 0.0);
  Vec flat(layers * n);
  for (std::size_t s = 0; s < opt_steps; ++s) {
    std::vector<Vec> grad;
    objective(theta, &grad);
    Vec gflat;
    for (std::size_t t = 0; t < layers; ++t) {
      std::copy(theta[t].begin(), theta[t].end(), flat.begin() + static_cast<std::ptrdiff_t>(t * n));
      gflat.insert(gflat.end(), grad[t].begin(), grad[t].end());
    }
    opt.step(flat, gflat);
    for (std::size_t t = 0; t < layers; ++t)
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(t * n),
                flat.begin() + static_cast<std::ptrdiff_t>((t + 1) * n), theta[t].begin());
  }
  fit.learned_p = to_p(theta);
  fit.learned_radii = radii(fit.learned_p);
  fit.final_objective = objective(theta, nullptr);
  return fit;
}

}  // namespace ofa
