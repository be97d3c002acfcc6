#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "ofa/numerics.hpp"

namespace ofa::ad {

class Tape;

/// Handle to a matrix-valued node on a Tape. Cheap to copy; only valid while
/// the owning tape is alive.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  /// Value of a 1x1 node.
  double scalar() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t index() const noexcept { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Wengert list of matrix operations. Nodes are appended in evaluation order,
/// which is also a topological order, so the reverse sweep is a single
/// backwards pass over the node list.
class Tape {
 public:
  using Backward = std::function<void(const Mat& upstream, Tape& tape)>;

  Var variable(Mat value);
  Var constant(Mat value);
  Var constant(double value);

  const Mat& value(const Var& v) const { return nodes_[v.index()].value; }
  bool needs_grad(const Var& v) const { return nodes_[v.index()].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradients of a 1x1 output with respect to each of `wrt`. Inputs the
  /// output does not depend on receive a zero matrix of their own shape.
  std::vector<Mat> gradient(const Var& output, std::span<const Var> wrt);

  /// Appends an op node. `backward` is skipped when no input needs a gradient.
  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward);

  /// Adds `contribution` to the adjoint of `target` during a reverse sweep.
  void accumulate(const Var& target, const Mat& contribution);

 private:
  struct Node {
    Mat value;
    Backward backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<Mat> adjoints_;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
/// a * s for a 1x1 node s.
Var mul(const Var& a, const Var& s);
/// a / s for a 1x1 node s.
Var div(const Var& a, const Var& s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var hadamard(const Var& a, const Var& b);
/// Multiplies row r of a by g(r, 0).
Var row_scale(const Var& a, const Var& g);
/// a - s broadcast over every entry, s 1x1.
Var sub_scalar(const Var& a, const Var& s);
Var sum(const Var& a);
Var mean(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
/// Entrywise max(a, floor); the gradient is zero where the floor is active.
Var floor_max(const Var& a, double floor);
Var softplus(const Var& a);
Var frob_inner(const Var& a, const Var& b);
/// Frobenius norm; the gradient at the zero matrix is taken as zero.
Var frob_norm(const Var& a);
Var entry(const Var& a, std::size_t r, std::size_t c);
/// Rows [r0, r0 + count) of column c, as a count x 1 node.
Var column_slice(const Var& a, std::size_t r0, std::size_t count, std::size_t c);
Var logsumexp(const Var& a);

}  // namespace ofa::ad
