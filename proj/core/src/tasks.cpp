#include "ofa/tasks.hpp"

#include <cmath>

#include "ofa/error.hpp"

namespace ofa {

std::string to_string(TaskKind kind) {
  return kind == TaskKind::regression ? "regression" : "classification";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "regression") return TaskKind::regression;
  if (name == "classification") return TaskKind::classification;
  throw Error(Errc::invalid_spec, "unknown task kind '" + name + "'");
}

void TaskSpec::validate() const {
  if (d < 1) throw Error(Errc::invalid_spec, "d must be >= 1");
  if (n_demos < 1) throw Error(Errc::invalid_spec, "n_demos must be >= 1");
  if (cov_spectrum.size() != d) {
    throw Error(Errc::invalid_spec, "cov_spectrum must have d entries");
  }
  for (double v : cov_spectrum) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(Errc::invalid_spec, "cov_spectrum entries must be positive");
    }
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw Error(Errc::invalid_spec, "noise_std must be >= 0");
  }
  if (kind == TaskKind::classification && n_classes < 2) {
    throw Error(Errc::invalid_spec, "n_classes must be >= 2 for classification");
  }
}

std::size_t label_rows(const TaskSpec& spec) {
  return spec.kind == TaskKind::regression ? 1 : spec.n_classes;
}

namespace {

Vec draw_features(const TaskSpec& spec, RngStream& rng) {
  Vec x(spec.d);
  for (std::size_t k = 0; k < spec.d; ++k) x[k] = std::sqrt(spec.cov_spectrum[k]) * rng.normal();
  return x;
}

double label_for(const TaskInstance& t, const Vec& x, RngStream& rng) {
  if (t.spec.kind == TaskKind::regression) {
    double y = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) y += t.weights(0, k) * x[k];
    if (t.spec.noise_std > 0.0) y += t.spec.noise_std * rng.normal();
    return y;
  }
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t c = 0; c < t.spec.n_classes; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += t.weights(c, k) * x[k];
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return static_cast<double>(best);
}

}  // namespace

TaskInstance sample_task(const TaskSpec& spec, RngStream& rng) {
  spec.validate();
  TaskInstance t;
  t.spec = spec;
  t.weights = rng.normal_mat(label_rows(spec), spec.d);
  t.xs.reserve(spec.n_demos);
  t.ys.reserve(spec.n_demos);
  for (std::size_t i = 0; i < spec.n_demos; ++i) {
    t.xs.push_back(draw_features(spec, rng));
    t.ys.push_back(label_for(t, t.xs.back(), rng));
  }
  t.x_query = draw_features(spec, rng);
  t.y_star = label_for(t, t.x_query, rng);
  return t;
}

std::vector<TaskInstance> sample_suite(const TaskSpec& spec, std::size_t count,
                                       const RngStream& base) {
  std::vector<TaskInstance> suite;
  suite.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = base.derive({i});
    suite.push_back(sample_task(spec, rng));
  }
  return suite;
}

PromptMatrix build_prompt(const TaskInstance& task) {
  const std::size_t d = task.spec.d;
  const std::size_t n = task.spec.n_demos;
  Mat z(d + 1, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) z(k, i) = task.xs[i][k];
    z(d, i) = task.ys[i];
  }
  for (std::size_t k = 0; k < d; ++k) z(k, n) = task.x_query[k];
  z(d, n) = 0.0;
  return PromptMatrix{std::move(z)};
}

Mat embed_prompt(const TaskInstance& task) {
  if (task.spec.kind == TaskKind::regression) return build_prompt(task).z;
  const std::size_t d = task.spec.d;
  const std::size_t n = task.spec.n_demos;
  const std::size_t k = task.spec.n_classes;
  Mat z(d + k, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < d; ++r) z(r, i) = task.xs[i][r];
    z(d + static_cast<std::size_t>(task.ys[i]), i) = 1.0;
  }
  for (std::size_t r = 0; r < d; ++r) z(r, n) = task.x_query[r];
  return z;
}

}  // namespace ofa
