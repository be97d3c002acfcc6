#include <cmath>

#include "doctest.h"
#include "ofa/error.hpp"
#include "ofa/training.hpp"

using namespace ofa;

namespace {

ModelConfig cfg_of(std::size_t d, std::size_t n, std::size_t layers) {
  ModelConfig c;
  c.d = d;
  c.n_demos = n;
  c.layers = layers;
  c.eta = 0.1;
  return c;
}

TaskSpec spec_of(std::size_t d, std::size_t n) {
  TaskSpec s;
  s.d = d;
  s.n_demos = n;
  s.cov_spectrum = Vec(d, 1.0);
  for (std::size_t i = 0; i < d; ++i) s.cov_spectrum[i] = 2.0 / static_cast<double>(i + 1);
  s.noise_std = 0.1;
  return s;
}

std::vector<Example> batch_of(const TaskSpec& s, std::size_t count, std::uint64_t seed) {
  return make_examples(sample_suite(s, count, RngStream(seed)));
}

PreconditionerSet random_gains(const ModelConfig& c, std::uint64_t seed) {
  PreconditionerSet p = PreconditionerSet::ones(c);
  RngStream rng(seed);
  for (Vec& g : p.gains)
    for (double& x : g) x = 0.5 + rng.uniform();
  return p;
}

}  // namespace

TEST_CASE("one-layer gradient matches the closed form") {
  const ModelConfig c = cfg_of(1, 3, 1);
  const Model m(c);
  const std::vector<Example> batch = batch_of(spec_of(1, 3), 1, 51);
  PreconditionerSet p = PreconditionerSet::ones(c);
  p.gains[0] = {0.7, 1.3};
  const Trajectory tr = forward(batch[0].prompt, m, PreconditionerSet::ones(c));
  // With unit gains the prediction is a, and it scales linearly with the label gain.
  const double a = predict(tr, c)[0];
  const ObjectiveGradient g =
      grad_objective(m, p, batch, 0, 0, SharpnessConfig{}, RngStream(1));
  CHECK(g.total[0][1] == doctest::Approx(2 * (1.3 * a - batch[0].target) * a).epsilon(1e-12));
  CHECK(g.total[0][0] == 0.0);
}

TEST_CASE("one-layer gradient vanishes at the stationary gain") {
  const ModelConfig c = cfg_of(1, 3, 1);
  const Model m(c);
  const std::vector<Example> batch = batch_of(spec_of(1, 3), 1, 52);
  const double a = predict(forward(batch[0].prompt, m, PreconditionerSet::ones(c)), c)[0];
  PreconditionerSet p = PreconditionerSet::ones(c);
  p.gains[0][1] = batch[0].target / a;
  const ObjectiveGradient g = grad_objective(m, p, batch, 0, 0, SharpnessConfig{}, RngStream(1));
  CHECK(std::abs(g.total[0][1]) < 1e-6);
}

TEST_CASE("analytic gradient matches finite differences") {
  for (std::size_t layers : {2u, 3u, 4u}) {
    const ModelConfig c = cfg_of(3, 5, layers);
    const Model m(c);
    const std::vector<Example> batch = batch_of(spec_of(3, 5), 3, 53 + layers);
    const PreconditionerSet p = random_gains(c, layers);
    const RngStream probes(7);
    const ObjectiveGradient g = grad_objective(m, p, batch, 0.01, 0.01, SharpnessConfig{}, probes);
    const std::vector<Vec> fd = fd_grad_objective(m, p, batch, 0.01, 0.01, SharpnessConfig{}, probes);
    CHECK(gradient_rel_error(g.total, fd) <= 1e-4);
    const ObjectiveBreakdown v = total_objective(m, p, batch, 0.01, 0.01, SharpnessConfig{}, probes);
    CHECK(g.value.total == doctest::Approx(v.total).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradient of a classification model") {
  ModelConfig c = cfg_of(2, 6, 3);
  c.kind = TaskKind::classification;
  c.n_classes = 3;
  TaskSpec s = spec_of(2, 6);
  s.kind = TaskKind::classification;
  s.n_classes = 3;
  const Model m(c);
  const std::vector<Example> batch = batch_of(s, 2, 60);
  const PreconditionerSet p = random_gains(c, 61);
  const ObjectiveGradient g = grad_objective(m, p, batch, 0.01, 0.01, SharpnessConfig{}, RngStream(3));
  const std::vector<Vec> fd = fd_grad_objective(m, p, batch, 0.01, 0.01, SharpnessConfig{}, RngStream(3));
  CHECK(gradient_rel_error(g.total, fd) <= 1e-4);
}

TEST_CASE("per-term gradients recompose the total") {
  const ModelConfig c = cfg_of(2, 4, 3);
  const Model m(c);
  const std::vector<Example> batch = batch_of(spec_of(2, 4), 2, 62);
  const ObjectiveGradient g = grad_objective(m, random_gains(c, 63), batch, 0.2, 0.3,
                                             SharpnessConfig{}, RngStream(4), true);
  for (std::size_t t = 0; t < c.layers; ++t)
    for (std::size_t r = 0; r < c.rows(); ++r)
      CHECK(g.total[t][r] == doctest::Approx(g.task[t][r] + 0.2 * g.step_ratio[t][r] +
                                             0.3 * g.sharpness[t][r])
                                 .epsilon(1e-10));
}

TEST_CASE("gradient is independent of the thread count") {
  const ModelConfig c = cfg_of(3, 5, 3);
  const Model m(c);
  const std::vector<Example> batch = batch_of(spec_of(3, 5), 8, 64);
  const PreconditionerSet p = random_gains(c, 65);
  const ObjectiveGradient a = grad_objective(m, p, batch, 0.1, 0.1, SharpnessConfig{}, RngStream(5), false, 1);
  const ObjectiveGradient b = grad_objective(m, p, batch, 0.1, 0.1, SharpnessConfig{}, RngStream(5), false, 4);
  CHECK(a.total == b.total);
  CHECK(a.value.total == b.value.total);
}

TEST_CASE("AdamW three steps by hand") {
  Optimizer opt(OptimizerKind::adamw, 0.1, 0.01);
  Vec p{1.0};
  const double grads[] = {0.5, -0.2, 0.3};
  double x = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    x -= 0.1 * 0.01 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    opt.step(p, Vec{g});
    CHECK(p[0] == doctest::Approx(x).epsilon(1e-15));
  }
  CHECK(opt.steps_taken() == 3);
  // The first AdamW step moves every parameter by about lr.
  Optimizer fresh(OptimizerKind::adamw, 0.1, 0.0);
  Vec q{0.0};
  fresh.step(q, Vec{1e-3});
  CHECK(q[0] == doctest::Approx(-0.1).epsilon(1e-4));
}

TEST_CASE("SGD with weight decay") {
  Optimizer opt(OptimizerKind::sgd, 0.5, 0.1);
  Vec p{2.0, -1.0};
  opt.step(p, Vec{1.0, 0.0});
  CHECK(p[0] == doctest::Approx(2.0 - 0.5 * (1.0 + 0.2)));
  CHECK(p[1] == doctest::Approx(-1.0 - 0.5 * (-0.1)));
  CHECK_THROWS_AS(opt.step(p, Vec{1.0}), Error);
}

TEST_CASE("zero learning rate leaves gains unchanged and displacement is linear in lr") {
  const Vec g{0.3, -0.7, 1.1};
  Vec zero{1, 2, 3};
  Optimizer(OptimizerKind::sgd, 0.0, 0.1).step(zero, g);
  CHECK(zero == Vec{1, 2, 3});
  Vec adam{1, 2, 3};
  Optimizer(OptimizerKind::adamw, 0.0, 0.1).step(adam, g);
  CHECK(adam == Vec{1, 2, 3});
  Vec a{1, 2, 3}, b{1, 2, 3};
  Optimizer(OptimizerKind::sgd, 1e-3, 0).step(a, g);
  Optimizer(OptimizerKind::sgd, 2e-3, 0).step(b, g);
  for (int i = 0; i < 3; ++i) CHECK((b[i] - (i + 1)) == doctest::Approx(2 * (a[i] - (i + 1))));
}

TEST_CASE("shuffle is a permutation and deterministic") {
  RngStream a(70), b(70);
  const auto x = shuffled_indices(50, a);
  const auto y = shuffled_indices(50, b);
  CHECK(x == y);
  std::vector<int> seen(50, 0);
  for (std::size_t i : x) ++seen[i];
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("training reduces the task loss") {
  const ModelConfig c = cfg_of(3, 6, 3);
  TrainConfig tc;
  tc.lambda1 = 0;
  tc.lambda2 = 0;
  tc.lr = 0.05;
  tc.epochs = 10;
  tc.train_tasks = 32;
  tc.eval_tasks = 16;
  tc.batch_size = 8;
  const TrainReport r = train(c, spec_of(3, 6), spec_of(3, 6), tc);
  CHECK(r.train.size() == 10);
  CHECK(r.optimizer_steps == 40);
  CHECK(r.train.back().task_loss < r.initial_train.task_loss);
  CHECK(metrics_csv(r).rfind("epoch,task_loss,step_ratio,sharpness,total,eval_task_loss\n", 0) == 0);
}

TEST_CASE("training is bit-identical across thread counts") {
  const ModelConfig c = cfg_of(2, 5, 3);
  TrainConfig tc;
  tc.epochs = 3;
  tc.train_tasks = 16;
  tc.eval_tasks = 8;
  tc.batch_size = 4;
  tc.lr = 0.01;
  tc.lambda1 = 0.01;
  tc.lambda2 = 0.01;
  const TrainReport a = train(c, spec_of(2, 5), spec_of(2, 5), tc, 1);
  const TrainReport b = train(c, spec_of(2, 5), spec_of(2, 5), tc, 3);
  CHECK(a.final_precond.flatten() == b.final_precond.flatten());
  CHECK(metrics_csv(a) == metrics_csv(b));
}

TEST_CASE("finite-difference training mode agrees with the analytic mode") {
  const ModelConfig c = cfg_of(2, 4, 2);
  TrainConfig tc;
  tc.optimizer = OptimizerKind::sgd;
  tc.epochs = 2;
  tc.train_tasks = 8;
  tc.eval_tasks = 4;
  tc.batch_size = 4;
  tc.lr = 0.01;
  const TrainReport a = train(c, spec_of(2, 4), spec_of(2, 4), tc);
  tc.grad_mode = GradMode::finite_difference;
  const TrainReport b = train(c, spec_of(2, 4), spec_of(2, 4), tc);
  const Vec fa = a.final_precond.flatten(), fb = b.final_precond.flatten();
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fa[i] == doctest::Approx(fb[i]).epsilon(1e-7));
}

TEST_CASE("divergence is reported with the partial history") {
  const ModelConfig c = cfg_of(2, 4, 3);
  TrainConfig tc;
  tc.optimizer = OptimizerKind::sgd;
  tc.lr = 1e9;
  tc.epochs = 5;
  tc.train_tasks = 8;
  tc.eval_tasks = 4;
  tc.batch_size = 4;
  try {
    train(c, spec_of(2, 4), spec_of(2, 4), tc);
    FAIL("expected divergence");
  } catch (const DivergedError& e) {
    CHECK(e.code() == Errc::diverged);
    CHECK(e.partial().train.size() < 5);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.lambda1 = -1;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  CHECK(optimizer_from_string("adamw") == OptimizerKind::adamw);
  CHECK(grad_mode_from_string(to_string(GradMode::finite_difference)) == GradMode::finite_difference);
  CHECK_THROWS_AS(optimizer_from_string("rmsprop"), Error);
}

TEST_CASE("gradcheck passes and its negative control does not") {
  TrainConfig tc;
  tc.lambda1 = 0;
  tc.lambda2 = 0;
  const GradcheckReport quad = gradcheck(tc, 4, 80);
  CHECK(quad.worst_task <= 1e-6);
  tc.lambda1 = 0.01;
  tc.lambda2 = 0.01;
  const GradcheckReport full = gradcheck(tc, 6, 81);
  CHECK(full.worst() <= 1e-4);
  CHECK(full.trials.size() == 6);
  CHECK(full.resampled_probe_err > 1e-2);
}

TEST_CASE("step-ratio preconditioner fit lowers its objective") {
  RngStream rng(90);
  const QuadraticProblem q = random_quadratic(3, 10.0, false, rng);
  const StepRatioFit f = fit_step_ratio_preconditioners(q, 0.05, 4, 100, 0.05, 4, RngStream(91));
  CHECK(f.final_objective < f.initial_objective);
  CHECK(f.learned_p.size() == 4);
  CHECK(f.initial_radii.size() == 4);
}
