#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace ofa {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles.
///
/// A default-constructed Mat is empty (0x0) and only serves as a placeholder;
/// every sized constructor requires rows >= 1 and cols >= 1.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Mat identity(std::size_t n);
  static Mat diag(std::span<const double> entries);
  static Mat column(std::span<const double> entries);
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Mat& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  Mat& operator+=(const Mat& other);
  Mat& operator-=(const Mat& other);
  Mat& operator*=(double s);

  friend Mat operator+(Mat a, const Mat& b) { return a += b; }
  friend Mat operator-(Mat a, const Mat& b) { return a -= b; }
  friend Mat operator*(Mat a, double s) { return a *= s; }
  friend Mat operator*(double s, Mat a) { return a *= s; }
  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat hadamard(const Mat& a, const Mat& b);

/// Square root of the sum of squared entries.
double frob_norm(const Mat& m);
double frob_inner(const Mat& a, const Mat& b);
double sum(const Mat& m);
double mean(const Mat& m);
bool all_finite(const Mat& m);
bool all_finite(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double max_abs(std::span<const double> v);

/// ln(1 + e^x) without overflow for large x or underflow for very negative x.
double softplus(double x);
double sigmoid(double x);

/// Solves a * x = b for symmetric positive definite a (Cholesky).
/// Throws Errc::non_finite if a is not numerically positive definite.
Mat solve_spd(const Mat& a, const Mat& b);

struct SpectralRadius {
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Spectral radius of a matrix that is diagonally similar to a symmetric one,
/// such as I - P*H with P diagonal positive and H symmetric.
///
/// The diagonal similarity D is recovered from the off-diagonal ratios
/// a_ij / a_ji = d_i^2 / d_j^2, and power iteration runs on D^-1 A D. Matrices
/// outside that family are rejected with Errc::not_symmetrizable. When the
/// iteration budget runs out the best estimate is returned with
/// converged = false.
SpectralRadius spectral_radius_sym_similar(const Mat& a,
                                           std::size_t iters = 20000,
                                           double tol = 1e-13,
                                           std::uint64_t seed = 0);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central finite-difference gradient: (f(p + h e_i) - f(p - h e_i)) / 2h.
Vec central_fd_grad(const ScalarFn& f, std::span<const double> p, double h);

}  // namespace ofa
