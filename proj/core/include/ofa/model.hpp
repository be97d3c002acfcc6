#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ofa/numerics.hpp"
#include "ofa/tasks.hpp"

namespace ofa {

enum class PrecondMode { identity, layernorm_gain };

std::string to_string(PrecondMode mode);
PrecondMode precond_mode_from_string(const std::string& name);

struct ModelConfig {
  std::size_t d = 4;
  std::size_t n_demos = 8;
  std::size_t layers = 4;
  /// Base step size baked into the attention value projection.
  double eta = 0.1;
  PrecondMode precond_mode = PrecondMode::layernorm_gain;
  bool mean_subtract = false;
  TaskKind kind = TaskKind::regression;
  std::size_t n_classes = 2;
  double sigma_floor = 1e-8;

  /// Label rows: 1 for regression, n_classes for classification.
  std::size_t out_dim() const;
  std::size_t rows() const { return d + out_dim(); }
  std::size_t cols() const { return n_demos + 1; }

  void validate() const;
};

/// Frozen linear-attention parameters: Attn(Z) = W_V Z M Z^T W_KQ Z with M the
/// demonstration mask (query column excluded from keys and values).
struct AttentionWeights {
  Mat value;
  Mat key_query;
  Vec demo_mask;
};

/// Weights under which one attention layer performs one gradient step (step
/// size eta, from w = 0) on the in-context least-squares objective
/// 1/2 sum_i |W x_i - y_i|^2. Label rows of demonstration columns then hold
/// residuals y_i - W_t x_i and the query label slot holds -W_t x_query.
AttentionWeights init_gd_construction(const ModelConfig& cfg);

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(ModelConfig cfg, AttentionWeights weights);

  const ModelConfig& config() const noexcept { return cfg_; }
  const AttentionWeights& weights() const noexcept { return weights_; }

  /// Attention output for state z, i.e. -eta * grad L(z) before
  /// preconditioning.
  Mat raw_update(const Mat& z) const;

  /// Jacobian of vec(raw_update) with respect to vec(z) (row-major vec), a
  /// (rows*cols) x (rows*cols) matrix.
  Mat raw_update_jacobian(const Mat& z) const;

 private:
  ModelConfig cfg_;
  AttentionWeights weights_;
};

/// Per-layer LayerNorm gains gamma_t, one entry per representation row.
struct PreconditionerSet {
  std::vector<Vec> gains;

  static PreconditionerSet ones(const ModelConfig& cfg);
  std::size_t parameter_count() const;
  Vec flatten() const;
  static PreconditionerSet unflatten(std::span<const double> flat, const ModelConfig& cfg);
  void validate(const ModelConfig& cfg) const;
};

struct LayerUpdateStats {
  Mat raw_update;
  double sigma = 1.0;
  double mu = 0.0;
  Mat applied_update;
  bool sigma_floored = false;
};

struct Trajectory {
  std::vector<Mat> states;
  std::vector<LayerUpdateStats> stats;
};

struct LayerResult {
  Mat next;
  LayerUpdateStats stats;
};

/// Applies the layer-t preconditioner to an attention output:
/// identity mode returns it unchanged, layernorm_gain mode returns
/// Gamma_t (raw - mu [mean_subtract]) / sigma with sigma the population
/// standard deviation over all entries, floored at cfg.sigma_floor.
LayerUpdateStats normalize_update(Mat raw, std::span<const double> gains,
                                  const ModelConfig& cfg);

LayerResult layer_update(const Mat& z, std::size_t t, const Model& model,
                         const PreconditionerSet& precond);

Trajectory forward(const Mat& z0, const Model& model, const PreconditionerSet& precond);

/// P_t v: row r scaled by gamma_t[r] / sigma_t in layernorm_gain mode, v
/// itself in identity mode.
Mat apply_preconditioner(const Mat& v, std::span<const double> gains, double sigma,
                         const ModelConfig& cfg);

/// Entrywise diagonal of P_t over vec(Z) (row-major).
Vec preconditioner_diagonal(std::span<const double> gains, double sigma,
                            const ModelConfig& cfg);

/// Reads the query label slots of the final state. The construction stores the
/// negated running prediction there, so the readout flips the sign: a scalar
/// prediction for regression, class logits for classification.
Vec predict(const Trajectory& traj, const ModelConfig& cfg);
Vec read_prediction(const Mat& state, const ModelConfig& cfg);

}  // namespace ofa
