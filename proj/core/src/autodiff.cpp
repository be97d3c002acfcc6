#include "ofa/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "ofa/error.hpp"

namespace ofa::ad {
namespace {

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw Error(Errc::invalid_spec, "Var is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw Error(Errc::invalid_spec, "Vars belong to different tapes");
  return tape_of(a);
}

void require_scalar(const Var& s, const char* op) {
  const Mat& v = s.value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw Error(Errc::shape_mismatch, std::string(op) + ": expected a 1x1 operand");
  }
}

Mat scalar_mat(double x) { return Mat(1, 1, x); }

}  // namespace

const Mat& Var::value() const { return tape_of(*this).value(*this); }

double Var::scalar() const {
  require_scalar(*this, "scalar");
  return value()(0, 0);
}

Var Tape::variable(Mat value) {
  nodes_.push_back(Node{std::move(value), nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(double value) { return constant(scalar_mat(value)); }

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backward backward) {
  if (!all_finite(value)) throw Error(Errc::non_finite, "non-finite value on tape");
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](const Var& v) { return needs_grad(v); });
  nodes_.push_back(Node{std::move(value), needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& target, const Mat& contribution) {
  if (!needs_grad(target)) return;
  Mat& adj = adjoints_[target.index()];
  if (adj.empty()) {
    adj = contribution;
  } else {
    adj += contribution;
  }
}

std::vector<Mat> Tape::gradient(const Var& output, std::span<const Var> wrt) {
  require_scalar(output, "gradient");
  adjoints_.assign(nodes_.size(), Mat());
  if (needs_grad(output)) {
    adjoints_[output.index()] = scalar_mat(1.0);
    for (std::size_t i = output.index() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward || adjoints_[i].empty()) continue;
      node.backward(adjoints_[i], *this);
    }
  }
  std::vector<Mat> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    const Mat& adj = adjoints_[v.index()];
    const Mat& val = value(v);
    out.push_back(adj.empty() ? Mat(val.rows(), val.cols()) : adj);
  }
  adjoints_.clear();
  return out;
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(a.value() + b.value(), {a, b}, [a, b](const Mat& up, Tape& tp) {
    tp.accumulate(a, up);
    tp.accumulate(b, up);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(a.value() - b.value(), {a, b}, [a, b](const Mat& up, Tape& tp) {
    tp.accumulate(a, up);
    tp.accumulate(b, up * -1.0);
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  Tape& t = tape_of(a);
  return t.record(a.value() * c, {a},
                  [a, c](const Mat& up, Tape& tp) { tp.accumulate(a, up * c); });
}

Var mul(const Var& a, const Var& s) {
  Tape& t = tape_of(a, s);
  require_scalar(s, "mul");
  return t.record(a.value() * s.scalar(), {a, s}, [a, s](const Mat& up, Tape& tp) {
    tp.accumulate(a, up * s.scalar());
    tp.accumulate(s, scalar_mat(frob_inner(up, a.value())));
  });
}

Var div(const Var& a, const Var& s) {
  Tape& t = tape_of(a, s);
  require_scalar(s, "div");
  const double inv = 1.0 / s.scalar();
  return t.record(a.value() * inv, {a, s}, [a, s](const Mat& up, Tape& tp) {
    const double sv = s.scalar();
    tp.accumulate(a, up * (1.0 / sv));
    tp.accumulate(s, scalar_mat(-frob_inner(up, a.value()) / (sv * sv)));
  });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(ofa::matmul(a.value(), b.value()), {a, b},
                  [a, b](const Mat& up, Tape& tp) {
                    if (tp.needs_grad(a)) tp.accumulate(a, ofa::matmul(up, ofa::transpose(b.value())));
                    if (tp.needs_grad(b)) tp.accumulate(b, ofa::matmul(ofa::transpose(a.value()), up));
                  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(ofa::transpose(a.value()), {a}, [a](const Mat& up, Tape& tp) {
    tp.accumulate(a, ofa::transpose(up));
  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(ofa::hadamard(a.value(), b.value()), {a, b},
                  [a, b](const Mat& up, Tape& tp) {
                    if (tp.needs_grad(a)) tp.accumulate(a, ofa::hadamard(up, b.value()));
                    if (tp.needs_grad(b)) tp.accumulate(b, ofa::hadamard(up, a.value()));
                  });
}

Var row_scale(const Var& a, const Var& g) {
  Tape& t = tape_of(a, g);
  const Mat& av = a.value();
  const Mat& gv = g.value();
  if (gv.rows() != av.rows() || gv.cols() != 1) {
    throw Error(Errc::shape_mismatch, "row_scale: gain must be rows x 1");
  }
  Mat out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= gv(r, 0);
  return t.record(std::move(out), {a, g}, [a, g](const Mat& up, Tape& tp) {
    const Mat& av = a.value();
    const Mat& gv = g.value();
    if (tp.needs_grad(a)) {
      Mat da = up;
      for (std::size_t r = 0; r < da.rows(); ++r)
        for (std::size_t c = 0; c < da.cols(); ++c) da(r, c) *= gv(r, 0);
      tp.accumulate(a, da);
    }
    if (tp.needs_grad(g)) {
      Mat dg(gv.rows(), 1);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) dg(r, 0) += up(r, c) * av(r, c);
      tp.accumulate(g, dg);
    }
  });
}

Var sub_scalar(const Var& a, const Var& s) {
  Tape& t = tape_of(a, s);
  require_scalar(s, "sub_scalar");
  Mat out = a.value();
  const double sv = s.scalar();
  for (double& x : out.data()) x -= sv;
  return t.record(std::move(out), {a, s}, [a, s](const Mat& up, Tape& tp) {
    tp.accumulate(a, up);
    tp.accumulate(s, scalar_mat(-ofa::sum(up)));
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(scalar_mat(ofa::sum(a.value())), {a}, [a](const Mat& up, Tape& tp) {
    const Mat& av = a.value();
    tp.accumulate(a, Mat(av.rows(), av.cols(), up(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var square(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(ofa::hadamard(a.value(), a.value()), {a},
                  [a](const Mat& up, Tape& tp) {
                    tp.accumulate(a, ofa::hadamard(up, a.value()) * 2.0);
                  });
}

Var sqrt(const Var& a) {
  Tape& t = tape_of(a);
  Mat out = a.value();
  for (double& x : out.data()) x = std::sqrt(x);
  return t.record(out, {a}, [a, out](const Mat& up, Tape& tp) {
    Mat da = up;
    auto r = out.data();
    auto d = da.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = r[i] > 0.0 ? d[i] / (2.0 * r[i]) : 0.0;
    tp.accumulate(a, da);
  });
}

Var floor_max(const Var& a, double floor) {
  Tape& t = tape_of(a);
  Mat out = a.value();
  for (double& x : out.data()) x = std::max(x, floor);
  return t.record(std::move(out), {a}, [a, floor](const Mat& up, Tape& tp) {
    Mat da = up;
    auto av = a.value().data();
    auto d = da.data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(av[i] > floor)) d[i] = 0.0;
    tp.accumulate(a, da);
  });
}

Var softplus(const Var& a) {
  Tape& t = tape_of(a);
  Mat out = a.value();
  for (double& x : out.data()) x = ofa::softplus(x);
  return t.record(std::move(out), {a}, [a](const Mat& up, Tape& tp) {
    Mat da = up;
    auto av = a.value().data();
    auto d = da.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= ofa::sigmoid(av[i]);
    tp.accumulate(a, da);
  });
}

Var frob_inner(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(scalar_mat(ofa::frob_inner(a.value(), b.value())), {a, b},
                  [a, b](const Mat& up, Tape& tp) {
                    tp.accumulate(a, b.value() * up(0, 0));
                    tp.accumulate(b, a.value() * up(0, 0));
                  });
}

Var frob_norm(const Var& a) {
  Tape& t = tape_of(a);
  const double n = ofa::frob_norm(a.value());
  return t.record(scalar_mat(n), {a}, [a, n](const Mat& up, Tape& tp) {
    if (n == 0.0) return;
    tp.accumulate(a, a.value() * (up(0, 0) / n));
  });
}

Var entry(const Var& a, std::size_t r, std::size_t c) {
  Tape& t = tape_of(a);
  const Mat& av = a.value();
  if (r >= av.rows() || c >= av.cols()) throw Error(Errc::shape_mismatch, "entry out of range");
  return t.record(scalar_mat(av(r, c)), {a}, [a, r, c](const Mat& up, Tape& tp) {
    const Mat& av = a.value();
    Mat da(av.rows(), av.cols());
    da(r, c) = up(0, 0);
    tp.accumulate(a, da);
  });
}

Var column_slice(const Var& a, std::size_t r0, std::size_t count, std::size_t c) {
  Tape& t = tape_of(a);
  const Mat& av = a.value();
  if (count == 0 || r0 + count > av.rows() || c >= av.cols()) {
    throw Error(Errc::shape_mismatch, "column_slice out of range");
  }
  Mat out(count, 1);
  for (std::size_t i = 0; i < count; ++i) out(i, 0) = av(r0 + i, c);
  return t.record(std::move(out), {a}, [a, r0, count, c](const Mat& up, Tape& tp) {
    const Mat& av = a.value();
    Mat da(av.rows(), av.cols());
    for (std::size_t i = 0; i < count; ++i) da(r0 + i, c) = up(i, 0);
    tp.accumulate(a, da);
  });
}

Var logsumexp(const Var& a) {
  Tape& t = tape_of(a);
  const auto v = a.value().data();
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  const double lse = m + std::log(s);
  return t.record(scalar_mat(lse), {a}, [a, lse](const Mat& up, Tape& tp) {
    Mat da = a.value();
    for (double& x : da.data()) x = up(0, 0) * std::exp(x - lse);
    tp.accumulate(a, da);
  });
}

}  // namespace ofa::ad
