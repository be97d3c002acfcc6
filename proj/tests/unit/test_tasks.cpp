#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"
#include "ofa/error.hpp"
#include "ofa/tasks.hpp"

using namespace ofa;

namespace {

TaskInstance manual_task(std::size_t d, std::vector<Vec> xs, Vec ys, Vec xq) {
  TaskInstance t;
  t.spec.d = d;
  t.spec.n_demos = xs.size();
  t.spec.cov_spectrum.assign(d, 1.0);
  t.weights = Mat(1, d);
  t.xs = std::move(xs);
  t.ys = std::move(ys);
  t.x_query = std::move(xq);
  return t;
}

}  // namespace

TEST_CASE("sample_task is deterministic") {
  TaskSpec spec;
  spec.d = 2;
  spec.n_demos = 2;
  spec.cov_spectrum = {1, 1};
  RngStream a(7), b(7);
  const TaskInstance t1 = sample_task(spec, a);
  const TaskInstance t2 = sample_task(spec, b);
  CHECK(t1.weights == t2.weights);
  CHECK(t1.xs == t2.xs);
  CHECK(t1.ys == t2.ys);
  CHECK(t1.x_query == t2.x_query);
  CHECK(t1.y_star == t2.y_star);
  CHECK(build_prompt(t1).z == build_prompt(t2).z);
}

TEST_CASE("noiseless regression labels are exact") {
  TaskSpec spec;
  RngStream rng(1);
  const TaskInstance t = sample_task(spec, rng);
  for (std::size_t i = 0; i < t.xs.size(); ++i) {
    double y = 0;
    for (std::size_t k = 0; k < spec.d; ++k) y += t.weights(0, k) * t.xs[i][k];
    CHECK(t.ys[i] - y == 0.0);
  }
}

TEST_CASE("anisotropic covariance shows up in the samples") {
  TaskSpec spec;
  spec.cov_spectrum = {100, 10, 1, 0.1};
  const auto suite = sample_suite(spec, 1000, RngStream(3));
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  std::size_t count = 0;
  for (const TaskInstance& t : suite)
    for (const Vec& x : t.xs) {
      Eigen::Vector4d v(x[0], x[1], x[2], x[3]);
      cov += v * v.transpose();
      ++count;
    }
  cov /= static_cast<double>(count);
  const Eigen::Vector4d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d>(cov).eigenvalues();
  CHECK(ev.maxCoeff() / ev.minCoeff() > 10.0);
  CHECK(ev.maxCoeff() == doctest::Approx(100.0).epsilon(0.05));
}

TEST_CASE("build_prompt examples") {
  const TaskInstance t = manual_task(2, {{1, 0}, {0, 1}}, {2, 3}, {1, 1});
  CHECK(build_prompt(t).z == Mat::from_rows({{1, 0, 1}, {0, 1, 1}, {2, 3, 0}}));
  const TaskInstance u = manual_task(1, {{5}}, {10}, {7});
  CHECK(build_prompt(u).z == Mat::from_rows({{5, 7}, {10, 0}}));
}

TEST_CASE("query label slot is always zero") {
  TaskSpec spec;
  spec.noise_std = 0.3;
  for (const TaskInstance& t : sample_suite(spec, 20, RngStream(4))) {
    const Mat z = build_prompt(t).z;
    CHECK(z.rows() == spec.d + 1);
    CHECK(z.cols() == spec.n_demos + 1);
    CHECK(z(spec.d, spec.n_demos) == 0.0);
  }
}

TEST_CASE("least squares on demos recovers w_star") {
  TaskSpec spec;
  spec.d = 3;
  spec.n_demos = 6;
  spec.cov_spectrum = {2, 1, 0.5};
  for (const TaskInstance& t : sample_suite(spec, 10, RngStream(8))) {
    Eigen::MatrixXd x(6, 3);
    Eigen::VectorXd y(6);
    for (int i = 0; i < 6; ++i) {
      for (int k = 0; k < 3; ++k) x(i, k) = t.xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      y(i) = t.ys[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd w = x.colPivHouseholderQr().solve(y);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(w(k) - t.weights(0, static_cast<std::size_t>(k))) < 1e-8);
  }
}

TEST_CASE("classification labels follow the argmax template") {
  TaskSpec spec;
  spec.kind = TaskKind::classification;
  spec.n_classes = 3;
  for (const TaskInstance& t : sample_suite(spec, 20, RngStream(5))) {
    CHECK(t.weights.rows() == 3);
    for (std::size_t i = 0; i < t.xs.size(); ++i) {
      std::size_t best = 0;
      double score = -1e300;
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < spec.d; ++k) s += t.weights(c, k) * t.xs[i][k];
        if (s > score) {
          score = s;
          best = c;
        }
      }
      CHECK(t.ys[i] == static_cast<double>(best));
    }
    const Mat e = embed_prompt(t);
    CHECK(e.rows() == spec.d + 3);
    for (std::size_t i = 0; i < t.xs.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(e(spec.d + c, i) == (static_cast<std::size_t>(t.ys[i]) == c ? 1.0 : 0.0));
    for (std::size_t c = 0; c < 3; ++c) CHECK(e(spec.d + c, spec.n_demos) == 0.0);
  }
}

TEST_CASE("sample_suite is order independent") {
  TaskSpec spec;
  const auto suite = sample_suite(spec, 5, RngStream(6));
  RngStream r3 = RngStream(6).derive({3});
  CHECK(sample_task(spec, r3).xs == suite[3].xs);
}

TEST_CASE("TaskSpec validation") {
  TaskSpec spec;
  spec.d = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = TaskSpec{};
  spec.cov_spectrum = {1, 1, 0, 1};
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = TaskSpec{};
  spec.cov_spectrum = {1, 1};
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = TaskSpec{};
  spec.kind = TaskKind::classification;
  spec.n_classes = 1;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = TaskSpec{};
  spec.noise_std = -1;
  CHECK_THROWS_AS(spec.validate(), Error);
}
