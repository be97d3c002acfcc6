#include "ofa/oracle.hpp"

#include <cmath>

#include "ofa/error.hpp"

namespace ofa {
namespace {

void require_symmetric(const Mat& h) {
  if (h.rows() != h.cols()) throw Error(Errc::shape_mismatch, "Hessian must be square");
  const double tol = 1e-12 * std::max(1.0, max_abs(h.data()));
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = i + 1; j < h.cols(); ++j)
      if (std::abs(h(i, j) - h(j, i)) > tol) {
        throw Error(Errc::not_symmetric, "Hessian is not symmetric");
      }
}

// Haar-random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
Mat random_rotation(std::size_t n, RngStream& rng) {
  Mat q = rng.normal_mat(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < n; ++i) q(i, j) -= proj * q(i, k);
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < n; ++i) nrm += q(i, j) * q(i, j);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= nrm;
  }
  return q;
}

}  // namespace

QuadraticProblem make_quadratic(Mat hessian, Vec optimum) {
  require_symmetric(hessian);
  if (optimum.size() != hessian.rows()) {
    throw Error(Errc::shape_mismatch, "optimum length does not match Hessian");
  }
  QuadraticProblem q;
  const Mat b = matmul(hessian, Mat::column(optimum));
  q.linear.assign(b.data().begin(), b.data().end());
  q.hessian = std::move(hessian);
  q.optimum = std::move(optimum);
  return q;
}

QuadraticProblem random_quadratic(std::size_t dim, double condition, bool rotated,
                                  RngStream& rng) {
  if (dim < 1 || !(condition >= 1.0)) {
    throw Error(Errc::invalid_spec, "quadratic needs dim >= 1 and condition >= 1");
  }
  Vec eig(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    if (i == 0) {
      eig[i] = 1.0;
    } else if (i == dim - 1) {
      eig[i] = condition;
    } else {
      eig[i] = 1.0 + (condition - 1.0) * rng.uniform();
    }
  }
  Mat h = Mat::diag(eig);
  if (rotated && dim > 1) {
    const Mat q = random_rotation(dim, rng);
    h = matmul(matmul(q, h), transpose(q));
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i + 1; j < dim; ++j) {
        const double m = 0.5 * (h(i, j) + h(j, i));
        h(i, j) = m;
        h(j, i) = m;
      }
  }
  return make_quadratic(std::move(h), rng.normal_vec(dim));
}

double exact_trace(std::span<const double> p_diag, const Mat& h) {
  require_symmetric(h);
  if (p_diag.size() != h.rows()) throw Error(Errc::shape_mismatch, "P and H sizes differ");
  double tr = 0.0;
  for (std::size_t i = 0; i < p_diag.size(); ++i) tr += p_diag[i] * p_diag[i] * h(i, i);
  return tr;
}

double exact_trace(const Mat& p, const Mat& h) {
  if (p.rows() != p.cols()) throw Error(Errc::shape_mismatch, "P must be square");
  Vec diag(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j)
      if (i != j && p(i, j) != 0.0) throw Error(Errc::shape_mismatch, "P must be diagonal");
    diag[i] = p(i, i);
  }
  return exact_trace(diag, h);
}

double hutchinson_exact_std_error(std::span<const double> p_diag, const Mat& h,
                                  std::size_t n_probes) {
  require_symmetric(h);
  double fro_sq = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) {
      const double a = p_diag[i] * h(i, j) * p_diag[j];
      fro_sq += a * a;
    }
  return std::sqrt(2.0 * fro_sq / static_cast<double>(n_probes));
}

GdIterates gd_iterates_ls(const TaskInstance& task, double eta, std::size_t steps,
                          const std::vector<Vec>& p_seq) {
  const std::size_t d = task.spec.d;
  const std::size_t out_dim = label_rows(task.spec);
  if (!p_seq.empty() && p_seq.size() < steps) {
    throw Error(Errc::shape_mismatch, "need one preconditioner per step");
  }
  auto target = [&](std::size_t i, std::size_t o) {
    if (task.spec.kind == TaskKind::regression) return task.ys[i];
    return static_cast<std::size_t>(task.ys[i]) == o ? 1.0 : 0.0;
  };
  auto predict = [&](const Mat& w) {
    Vec p(out_dim, 0.0);
    for (std::size_t o = 0; o < out_dim; ++o)
      for (std::size_t k = 0; k < d; ++k) p[o] += w(o, k) * task.x_query[k];
    return p;
  };

  GdIterates out;
  Mat w(out_dim, d);
  out.weights.push_back(w);
  out.predictions.push_back(predict(w));
  for (std::size_t t = 0; t < steps; ++t) {
    Mat grad(out_dim, d);
    for (std::size_t i = 0; i < task.xs.size(); ++i) {
      const Vec& x = task.xs[i];
      for (std::size_t o = 0; o < out_dim; ++o) {
        double r = -target(i, o);
        for (std::size_t k = 0; k < d; ++k) r += w(o, k) * x[k];
        for (std::size_t k = 0; k < d; ++k) grad(o, k) += r * x[k];
      }
    }
    for (std::size_t o = 0; o < out_dim; ++o)
      for (std::size_t k = 0; k < d; ++k) {
        const double p = p_seq.empty() ? 1.0 : p_seq[t][k];
        w(o, k) -= eta * p * grad(o, k);
      }
    out.weights.push_back(w);
    out.predictions.push_back(predict(w));
  }
  return out;
}

double step_operator_radius(const Mat& h, std::span<const double> p, double eta) {
  const std::size_t n = h.rows();
  if (p.size() != n) throw Error(Errc::shape_mismatch, "P and H sizes differ");
  Mat a = Mat::identity(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) -= eta * p[i] * h(i, j);
  return spectral_radius_sym_similar(a).value;
}

std::vector<ContractionStep> contraction_factors(const QuadraticProblem& q,
                                                 const std::vector<Vec>& p_seq, double eta,
                                                 const Vec& z0) {
  const std::size_t n = q.hessian.rows();
  if (z0.size() != n) throw Error(Errc::shape_mismatch, "z0 length does not match problem");
  Vec err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = z0[i] - q.optimum[i];
  if (norm2(err) == 0.0) throw Error(Errc::at_optimum, "z0 equals the optimum");

  std::vector<ContractionStep> out;
  Vec z = z0;
  for (const Vec& p : p_seq) {
    if (p.size() != n) throw Error(Errc::shape_mismatch, "preconditioner length mismatch");
    const double before = norm2(err);
    Vec next(n);
    for (std::size_t i = 0; i < n; ++i) {
      double g = -q.linear[i];
      for (std::size_t j = 0; j < n; ++j) g += q.hessian(i, j) * z[j];
      next[i] = z[i] - eta * p[i] * g;
    }
    z = std::move(next);
    for (std::size_t i = 0; i < n; ++i) err[i] = z[i] - q.optimum[i];
    ContractionStep step;
    step.ratio = before > 0.0 ? norm2(err) / before : 0.0;
    step.radius = step_operator_radius(q.hessian, p, eta);
    out.push_back(step);
  }
  return out;
}

double preconditioned_curvature_sq(std::span<const double> p, const Mat& h) {
  if (p.size() != h.rows()) throw Error(Errc::shape_mismatch, "P and H sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) {
      const double a = p[i] * h(i, j);
      s += a * a;
    }
  return s;
}

BoundReport bound_quantity(const std::vector<Vec>& p_seq, const std::vector<Mat>& h_seq,
                           std::size_t n) {
  if (p_seq.size() != h_seq.size()) {
    throw Error(Errc::shape_mismatch, "P and H sequences differ in length");
  }
  if (n == 0) throw Error(Errc::invalid_spec, "sample count must be >= 1");
  BoundReport r;
  for (std::size_t t = 0; t < p_seq.size(); ++t) {
    r.curvature_sum += preconditioned_curvature_sq(p_seq[t], h_seq[t]);
  }
  r.bound_value = std::sqrt(r.curvature_sum / static_cast<double>(n));
  return r;
}

}  // namespace ofa
