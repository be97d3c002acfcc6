#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ofa/error.hpp"
#include "ofa/model.hpp"
#include "ofa/oracle.hpp"
#include "ofa/tasks.hpp"

using namespace ofa;

namespace {

ModelConfig config(std::size_t d, std::size_t n, std::size_t layers, double eta,
                   PrecondMode mode = PrecondMode::identity) {
  ModelConfig c;
  c.d = d;
  c.n_demos = n;
  c.layers = layers;
  c.eta = eta;
  c.precond_mode = mode;
  return c;
}

TaskSpec spec_for(const ModelConfig& c) {
  TaskSpec s;
  s.d = c.d;
  s.n_demos = c.n_demos;
  s.cov_spectrum.assign(c.d, 1.0);
  return s;
}

}  // namespace

TEST_CASE("one layer from w = 0 on a single demo") {
  const ModelConfig c = config(1, 1, 1, 0.5);
  const Mat z0 = Mat::from_rows({{1, 3}, {2, 0}});
  const Model m(c);
  const Trajectory tr = forward(z0, m, PreconditionerSet::ones(c));
  CHECK(predict(tr, c)[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("prediction readout negates the query label slot") {
  const ModelConfig c = config(2, 2, 1, 0.1);
  const Mat state = Mat::from_rows({{1, 1, 1}, {1, 1, 1}, {2, 3, 0.7}});
  CHECK(read_prediction(state, c)[0] == -0.7);
}

TEST_CASE("eta = 0 freezes every state") {
  const ModelConfig c = config(3, 4, 3, 0.0, PrecondMode::identity);
  RngStream rng(1);
  const TaskInstance t = sample_task(spec_for(c), rng);
  const Mat z0 = build_prompt(t).z;
  const Trajectory tr = forward(z0, Model(c), PreconditionerSet::ones(c));
  for (const Mat& s : tr.states) CHECK(s == z0);
  CHECK(predict(tr, c)[0] == 0.0);
}

TEST_CASE("identity mode applies the raw update exactly") {
  const ModelConfig c = config(3, 5, 2, 0.2);
  RngStream rng(2);
  const Mat z = build_prompt(sample_task(spec_for(c), rng)).z;
  const Model m(c);
  const LayerResult r = layer_update(z, 0, m, PreconditionerSet::ones(c));
  CHECK(r.next - z == m.raw_update(z));
  CHECK(r.stats.applied_update == r.stats.raw_update);
}

TEST_CASE("zero gains freeze the state") {
  ModelConfig c = config(3, 5, 2, 0.2, PrecondMode::layernorm_gain);
  RngStream rng(3);
  const Mat z = build_prompt(sample_task(spec_for(c), rng)).z;
  PreconditionerSet p = PreconditionerSet::ones(c);
  p.gains[1].assign(c.rows(), 0.0);
  CHECK(layer_update(z, 1, Model(c), p).next == z);
}

TEST_CASE("layernorm mode divides by the population std of the raw update") {
  ModelConfig c = config(3, 5, 2, 0.2, PrecondMode::layernorm_gain);
  RngStream rng(4);
  const Mat z = build_prompt(sample_task(spec_for(c), rng)).z;
  const Model m(c);
  const LayerResult r = layer_update(z, 0, m, PreconditionerSet::ones(c));
  const Mat raw = m.raw_update(z);
  double mu = 0, var = 0;
  for (double x : raw.data()) mu += x;
  mu /= static_cast<double>(raw.size());
  for (double x : raw.data()) var += (x - mu) * (x - mu);
  const double sigma = std::sqrt(var / static_cast<double>(raw.size()));
  CHECK(r.stats.sigma == doctest::Approx(sigma).epsilon(1e-14));
  for (std::size_t i = 0; i < raw.size(); ++i)
    CHECK(r.stats.applied_update.data()[i] == doctest::Approx(raw.data()[i] / sigma).epsilon(1e-14));
  // Positive rescaling keeps signs.
  for (std::size_t i = 0; i < raw.size(); ++i)
    CHECK(std::signbit(r.stats.applied_update.data()[i]) == std::signbit(raw.data()[i]));
}

TEST_CASE("mean_subtract shifts by the mean before scaling") {
  ModelConfig c = config(2, 3, 1, 0.3, PrecondMode::layernorm_gain);
  c.mean_subtract = true;
  RngStream rng(5);
  const Mat z = build_prompt(sample_task(spec_for(c), rng)).z;
  const Model m(c);
  const LayerUpdateStats s = layer_update(z, 0, m, PreconditionerSet::ones(c)).stats;
  CHECK(std::abs(mean(s.applied_update)) < 1e-14);
}

TEST_CASE("degenerate updates hit the sigma floor") {
  ModelConfig c = config(2, 3, 1, 0.0, PrecondMode::layernorm_gain);
  const Mat z = Mat::from_rows({{1, 2, 3, 4}, {0, 1, 0, 1}, {1, 1, 1, 0}});
  const LayerUpdateStats s = layer_update(z, 0, Model(c), PreconditionerSet::ones(c)).stats;
  CHECK(s.sigma_floored);
  CHECK(s.sigma == c.sigma_floor);
}

TEST_CASE("trajectory consistency") {
  ModelConfig c = config(4, 8, 4, 0.1, PrecondMode::layernorm_gain);
  RngStream rng(6);
  const Mat z0 = build_prompt(sample_task(spec_for(c), rng)).z;
  PreconditionerSet p = PreconditionerSet::ones(c);
  for (Vec& g : p.gains)
    for (double& x : g) x = 0.5 + rng.uniform();
  const Trajectory tr = forward(z0, Model(c), p);
  REQUIRE(tr.states.size() == 5);
  REQUIRE(tr.stats.size() == 4);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(tr.states[t + 1] == tr.states[t] + tr.stats[t].applied_update);
    CHECK(frob_norm(tr.states[t + 1] - tr.states[t] - tr.stats[t].applied_update) <= 1e-14);
  }
}

TEST_CASE("forward is deterministic") {
  ModelConfig c = config(4, 8, 3, 0.1, PrecondMode::layernorm_gain);
  RngStream rng(7);
  const Mat z0 = build_prompt(sample_task(spec_for(c), rng)).z;
  const Trajectory a = forward(z0, Model(c), PreconditionerSet::ones(c));
  const Trajectory b = forward(z0, Model(c), PreconditionerSet::ones(c));
  for (std::size_t t = 0; t < a.states.size(); ++t) CHECK(a.states[t] == b.states[t]);
}

TEST_CASE("demonstration order does not change the prediction") {
  ModelConfig c = config(3, 6, 3, 0.1, PrecondMode::layernorm_gain);
  RngStream rng(8);
  TaskInstance t = sample_task(spec_for(c), rng);
  const double before = predict(forward(build_prompt(t).z, Model(c), PreconditionerSet::ones(c)), c)[0];
  std::reverse(t.xs.begin(), t.xs.end());
  std::reverse(t.ys.begin(), t.ys.end());
  std::swap(t.xs[0], t.xs[2]);
  std::swap(t.ys[0], t.ys[2]);
  const double after = predict(forward(build_prompt(t).z, Model(c), PreconditionerSet::ones(c)), c)[0];
  CHECK(std::abs(before - after) <= 1e-12 * std::max(1.0, std::abs(before)));
}

TEST_CASE("GD construction reproduces explicit GD iterates") {
  RngStream rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 1 + rng.below(8);
    const std::size_t n = 1 + rng.below(16);
    const std::size_t layers = 1 + rng.below(6);
    TaskSpec s;
    s.d = d;
    s.n_demos = n;
    s.cov_spectrum.assign(d, 1.0);
    RngStream trng = rng.derive({static_cast<std::uint64_t>(trial)});
    const TaskInstance t = sample_task(s, trng);
    double gram_trace = 0;
    for (const Vec& x : t.xs)
      for (double v : x) gram_trace += v * v;
    const double eta = 0.5 / gram_trace;
    const ModelConfig c = config(d, n, layers, eta);
    const double pred = predict(forward(build_prompt(t).z, Model(c), PreconditionerSet::ones(c)), c)[0];
    const double oracle = gd_iterates_ls(t, eta, layers).predictions.back()[0];
    CHECK(std::abs(pred - oracle) <= 1e-10 * std::max(std::abs(oracle), 1e-12));
  }
}

TEST_CASE("classification head runs GD on one-hot targets") {
  ModelConfig c = config(3, 5, 2, 0.05);
  c.kind = TaskKind::classification;
  c.n_classes = 3;
  TaskSpec s = spec_for(c);
  s.kind = TaskKind::classification;
  s.n_classes = 3;
  RngStream rng(10);
  const TaskInstance t = sample_task(s, rng);
  const Vec logits = predict(forward(embed_prompt(t), Model(c), PreconditionerSet::ones(c)), c);
  const Vec oracle = gd_iterates_ls(t, c.eta, c.layers).predictions.back();
  REQUIRE(logits.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(logits[k] == doctest::Approx(oracle[k]).epsilon(1e-10));
}

TEST_CASE("raw update Jacobian matches finite differences") {
  ModelConfig c = config(2, 3, 1, 0.3);
  RngStream rng(11);
  const Mat z = rng.normal_mat(c.rows(), c.cols());
  const Model m(c);
  const Mat jac = m.raw_update_jacobian(z);
  const double h = 1e-6;
  for (std::size_t k = 0; k < z.size(); ++k) {
    Mat zp = z, zm = z;
    zp.data()[k] += h;
    zm.data()[k] -= h;
    const Mat col = (m.raw_update(zp) - m.raw_update(zm)) * (1.0 / (2 * h));
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(jac(i, k) == doctest::Approx(col.data()[i]).epsilon(1e-7));
  }
}

TEST_CASE("shape and config errors") {
  const ModelConfig c = config(2, 3, 2, 0.1);
  CHECK_THROWS_AS(layer_update(Mat(2, 2), 0, Model(c), PreconditionerSet::ones(c)), Error);
  CHECK_THROWS_AS(layer_update(Mat(3, 4), 5, Model(c), PreconditionerSet::ones(c)), Error);
  ModelConfig bad = c;
  bad.eta = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
  PreconditionerSet p = PreconditionerSet::ones(c);
  p.gains[0][0] = NAN;
  CHECK_THROWS_AS(p.validate(c), Error);
  const Vec flat = PreconditionerSet::ones(c).flatten();
  CHECK(flat.size() == 6);
  CHECK(PreconditionerSet::unflatten(flat, c).gains == PreconditionerSet::ones(c).gains);
}
