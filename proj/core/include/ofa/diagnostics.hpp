#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ofa/model.hpp"
#include "ofa/objectives.hpp"
#include "ofa/oracle.hpp"
#include "ofa/rng.hpp"
#include "ofa/tasks.hpp"

namespace ofa {

inline constexpr double kProbeRidge = 1e-3;

/// Ridge classifier: scores = W [x; 1], one row of W per class. The bias
/// column is not penalized.
struct LinearProbe {
  Mat weights;
};

struct ProbeScore {
  double accuracy = 0.0;
  /// Mean cross-entropy of softmax(scores).
  double ce = 0.0;
};

/// features[layer][sample]; labels in [0, n_classes).
std::vector<LinearProbe> probe_fit(const std::vector<std::vector<Vec>>& features,
                                   const std::vector<std::size_t>& labels, std::size_t n_classes,
                                   double ridge = kProbeRidge);

std::vector<ProbeScore> probe_eval(const std::vector<LinearProbe>& probes,
                                   const std::vector<std::vector<Vec>>& features,
                                   const std::vector<std::size_t>& labels);

/// Query-column features of every state, features[t][i] for trajectory i.
std::vector<std::vector<Vec>> query_features(const std::vector<Trajectory>& trajectories);

/// Class labels of a suite; regression tasks are labelled by sign(y_star).
std::vector<std::size_t> probe_labels(const std::vector<TaskInstance>& suite);

struct LayerProfileRow {
  std::size_t layer = 0;
  /// NaN where the quantity is not defined for the layer.
  double mean_step_ratio = 0.0;
  double guarded_fraction = 0.0;
  double mean_sharpness = 0.0;
  double sharpness_std_error = 0.0;
  double probe_acc = 0.0;
  double probe_ce = 0.0;
};

struct LayerProfile {
  std::vector<LayerProfileRow> rows;
};

/// Rows t = 0..T. Step ratios and sharpness (raw trace estimates, no
/// softplus) are defined for t = 1..T-1 and averaged over eval_suite; task
/// i of the suite draws its probes from probes.derive({i}). Probes are fit on
/// probe_suite trajectories and scored on eval_suite.
LayerProfile layer_profiles(const Model& model, const PreconditionerSet& precond,
                            const std::vector<TaskInstance>& probe_suite,
                            const std::vector<TaskInstance>& eval_suite,
                            const SharpnessConfig& cfg, const RngStream& probes,
                            std::size_t threads = 1);

/// Header `layer,mean_step_ratio,mean_sharpness,probe_acc,probe_ce`; undefined
/// cells are left empty.
std::string profile_csv(const LayerProfile& profile);

/// Preconditioned curvature of a model over a suite: curvature_sum is the
/// suite mean of sum_t ||P_t H_t||_F^2 over all T layers with
/// H_t = -d raw_update / dZ at Z_t and P_t = diag(gamma_t / sigma_t) over
/// vec(Z); bound_value = sqrt(curvature_sum / n_train). grad_bound and
/// smooth_bound are the largest ||raw_update||_F and ||H_t||_F seen.
BoundReport model_bound(const Model& model, const PreconditionerSet& precond,
                        const std::vector<Mat>& prompts, std::size_t n_train,
                        std::size_t threads = 1);

struct GapRun {
  std::string run_id;
  double lambda2 = 0.0;
  BoundReport bound;
};

struct GapReport {
  std::string csv;
  /// Spearman correlation of bound_value and measured_gap; empty when either
  /// column is constant.
  std::optional<double> rank_correlation;
};

/// Average-rank Spearman correlation; nullopt for constant input.
std::optional<double> spearman(const Vec& a, const Vec& b);

GapReport gap_report(const std::vector<GapRun>& runs);

struct Series {
  std::string name;
  Vec xs;
  Vec ys;
};

/// Self-contained 800x480 SVG line chart, one polyline per series.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

}  // namespace ofa
