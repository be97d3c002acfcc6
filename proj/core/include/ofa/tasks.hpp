#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ofa/numerics.hpp"
#include "ofa/rng.hpp"

namespace ofa {

enum class TaskKind { regression, classification };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

/// Distribution of synthetic in-context tasks.
struct TaskSpec {
  TaskKind kind = TaskKind::regression;
  std::size_t d = 4;
  std::size_t n_demos = 8;
  /// Eigenvalues of the (axis-aligned) feature covariance, one per input dim.
  Vec cov_spectrum = {1.0, 1.0, 1.0, 1.0};
  double noise_std = 0.0;
  /// Only meaningful for classification.
  std::size_t n_classes = 2;

  /// Throws Errc::invalid_spec naming the offending field.
  void validate() const;
};

/// One sampled task. For regression `weights` is 1 x d (w_star); for
/// classification it is n_classes x d (one template per class) and labels are
/// class indices stored as doubles.
struct TaskInstance {
  TaskSpec spec;
  Mat weights;
  std::vector<Vec> xs;
  Vec ys;
  Vec x_query;
  double y_star = 0.0;
};

/// (d+1) x (n+1) prompt: columns (x_i; y_i) followed by (x_query; 0).
struct PromptMatrix {
  Mat z;
};

TaskInstance sample_task(const TaskSpec& spec, RngStream& rng);

/// Task i is drawn from base.derive({i}), so suites can be generated in any
/// order or in parallel with identical results.
std::vector<TaskInstance> sample_suite(const TaskSpec& spec, std::size_t count,
                                       const RngStream& base);

PromptMatrix build_prompt(const TaskInstance& task);

/// Model input for a task. Regression: the prompt itself. Classification: the
/// scalar label row is replaced by n_classes one-hot rows, the query column's
/// label rows are zero and later hold the class scores.
Mat embed_prompt(const TaskInstance& task);

std::size_t label_rows(const TaskSpec& spec);

}  // namespace ofa
