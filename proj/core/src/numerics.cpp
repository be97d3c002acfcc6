#include "ofa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>

#include "ofa/error.hpp"
#include "ofa/rng.hpp"

namespace ofa {
namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(Errc::shape_mismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                    "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw Error(Errc::shape_mismatch, "Mat dimensions must be >= 1");
  }
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0 || data_.size() != rows * cols) {
    throw Error(Errc::shape_mismatch, "Mat data does not match dimensions");
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diag(std::span<const double> entries) {
  Mat m(entries.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) m(i, i) = entries[i];
  return m;
}

Mat Mat::column(std::span<const double> entries) {
  return Mat(entries.size(), 1, std::vector<double>(entries.begin(), entries.end()));
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(Errc::shape_mismatch, "ragged row list");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat(r, c, std::move(data));
}

Mat& Mat::operator+=(const Mat& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw Error(Errc::shape_mismatch, "matmul: inner dimensions differ");
  }
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Mat transpose(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Mat hadamard(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "hadamard");
  Mat out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

double frob_norm(const Mat& m) { return norm2(m.data()); }

double frob_inner(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "frob_inner");
  return dot(a.data(), b.data());
}

double sum(const Mat& m) {
  double s = 0.0;
  for (double x : m.data()) s += x;
  return s;
}

double mean(const Mat& m) { return sum(m) / static_cast<double>(m.size()); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool all_finite(const Mat& m) { return all_finite(m.data()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::shape_mismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) {
  // Scaled accumulation so huge or tiny entries neither overflow nor flush.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double s = 0.0;
  for (double x : v) {
    const double r = x / scale;
    s += r * r;
  }
  return scale * std::sqrt(s);
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Mat solve_spd(const Mat& a, const Mat& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw Error(Errc::non_square, "solve_spd: matrix not square");
  if (b.rows() != n) throw Error(Errc::shape_mismatch, "solve_spd: rhs rows differ");
  Mat l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) throw Error(Errc::non_finite, "solve_spd: not positive definite");
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  Mat x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

SpectralRadius spectral_radius_sym_similar(const Mat& a, std::size_t iters, double tol,
                                           std::uint64_t seed) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw Error(Errc::non_square, "spectral radius needs a square matrix");
  if (!all_finite(a)) throw Error(Errc::non_finite, "spectral radius input not finite");

  // Recover log d_i from a_ij / a_ji = d_i^2 / d_j^2 along a spanning forest.
  const double scale = std::max(max_abs(a.data()), 1e-300);
  const double zero_tol = 1e-14 * scale;
  std::vector<double> log_d(n, 0.0);
  std::vector<bool> seen(n, false);
  for (std::size_t root = 0; root < n; ++root) {
    if (seen[root]) continue;
    seen[root] = true;
    std::queue<std::size_t> frontier;
    frontier.push(root);
    while (!frontier.empty()) {
      const std::size_t i = frontier.front();
      frontier.pop();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double aij = a(i, j);
        const double aji = a(j, i);
        const bool zij = std::abs(aij) <= zero_tol;
        const bool zji = std::abs(aji) <= zero_tol;
        if (zij && zji) continue;
        if (zij != zji || (aij > 0) != (aji > 0)) {
          throw Error(Errc::not_symmetrizable,
                      "matrix is not diagonally similar to a symmetric matrix");
        }
        const double expected = log_d[i] + 0.5 * std::log(aji / aij);
        if (!seen[j]) {
          seen[j] = true;
          log_d[j] = expected;
          frontier.push(j);
        } else if (std::abs(log_d[j] - expected) > 1e-8) {
          throw Error(Errc::not_symmetrizable,
                      "inconsistent diagonal similarity (non-normal input)");
        }
      }
    }
  }

  Mat s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = a(i, j) * std::exp(log_d[j] - log_d[i]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (s(i, j) + s(j, i));
      s(i, j) = m;
      s(j, i) = m;
    }

  SpectralRadius out;
  if (max_abs(s.data()) == 0.0) {
    out.converged = true;
    return out;
  }

  RngStream rng(seed, 0x5eed);
  Vec v = rng.normal_vec(n);
  double nv = norm2(v);
  for (double& x : v) x /= nv;

  double prev = -1.0;
  Vec w(n);
  for (std::size_t k = 1; k <= iters; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += s(i, j) * v[j];
      w[i] = acc;
    }
    const double est = norm2(w);
    out.value = est;
    out.iterations = k;
    if (est == 0.0) {
      // Iterate fell into the null space; redraw.
      v = rng.normal_vec(n);
      nv = norm2(v);
      for (double& x : v) x /= nv;
      continue;
    }
    if (std::abs(est - prev) <= tol * std::max(1.0, est)) {
      out.converged = true;
      return out;
    }
    prev = est;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / est;
  }
  return out;
}

Vec central_fd_grad(const ScalarFn& f, std::span<const double> p, double h) {
  if (!(h > 0.0)) throw Error(Errc::invalid_spec, "finite-difference step must be > 0");
  Vec x(p.begin(), p.end());
  Vec g(p.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error(Errc::non_finite,
                  "NonFiniteEvaluation at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace ofa
