#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ofa/numerics.hpp"
#include "ofa/rng.hpp"
#include "ofa/tasks.hpp"

namespace ofa {

/// L(z) = 1/2 z^T H z - b^T z with H symmetric and H z_star = b.
struct QuadraticProblem {
  Mat hessian;
  Vec linear;
  Vec optimum;
};

QuadraticProblem make_quadratic(Mat hessian, Vec optimum);

/// Symmetric positive definite Hessian with eigenvalues spanning [1, condition]
/// (both ends included, the rest uniform in between). With `rotated` the
/// eigenbasis is a Haar-random rotation, otherwise H is diagonal. The optimum
/// is standard normal.
QuadraticProblem random_quadratic(std::size_t dim, double condition, bool rotated,
                                  RngStream& rng);

/// tr(P H P^T) = sum_i p_i^2 H_ii for diagonal P.
double exact_trace(std::span<const double> p_diag, const Mat& h);
/// Same, with P given as a diagonal matrix (off-diagonal entries must be 0).
double exact_trace(const Mat& p, const Mat& h);

/// Exact standard error of the N-probe Gaussian Hutchinson estimate of
/// tr(A), A = P H P: sqrt(2 / N) * ||A||_F.
double hutchinson_exact_std_error(std::span<const double> p_diag, const Mat& h,
                                  std::size_t n_probes);

struct GdIterates {
  /// W_0 .. W_T, each out_dim x d (out_dim = 1 for regression).
  std::vector<Mat> weights;
  /// W_t x_query for t = 0..T.
  std::vector<Vec> predictions;
};

/// Explicit preconditioned gradient descent on 1/2 sum_i |W x_i - y_i|^2 from
/// W_0 = 0: W_{t+1} = W_t - eta * (sum_i (W_t x_i - y_i) x_i^T) diag(p_t).
/// Classification labels enter as one-hot vectors. An empty p_seq means P = I.
GdIterates gd_iterates_ls(const TaskInstance& task, double eta, std::size_t steps,
                          const std::vector<Vec>& p_seq = {});

struct ContractionStep {
  /// ||z_{t+1} - z*|| / ||z_t - z*|| (0 once the iterate sits on z*).
  double ratio = 0.0;
  /// Spectral radius of I - eta P_t H.
  double radius = 0.0;
};

/// Runs z_{t+1} = z_t - eta P_t (H z_t - b) for p_seq.size() steps.
std::vector<ContractionStep> contraction_factors(const QuadraticProblem& q,
                                                 const std::vector<Vec>& p_seq, double eta,
                                                 const Vec& z0);

/// Spectral radius of I - eta diag(p) H.
double step_operator_radius(const Mat& h, std::span<const double> p, double eta);

struct BoundReport {
  double curvature_sum = 0.0;
  double bound_value = 0.0;
  double grad_bound = 0.0;
  double smooth_bound = 0.0;
  double measured_gap = 0.0;
};

/// curvature_sum = sum_t ||P_t H_t||_F^2 and bound_value =
/// sqrt(curvature_sum / n). The remaining fields are left for the caller.
BoundReport bound_quantity(const std::vector<Vec>& p_seq, const std::vector<Mat>& h_seq,
                           std::size_t n);

/// ||diag(p) H||_F^2, the per-step curvature term.
double preconditioned_curvature_sq(std::span<const double> p, const Mat& h);

}  // namespace ofa
