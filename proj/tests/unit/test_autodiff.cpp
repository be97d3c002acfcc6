#include <cmath>
#include <functional>

#include "doctest.h"
#include "ofa/autodiff.hpp"
#include "ofa/error.hpp"
#include "ofa/rng.hpp"

using namespace ofa;

namespace {

using Builder = std::function<ad::Var(std::vector<ad::Var>&)>;

// Compares tape gradients with central differences for every input entry.
void check_gradient(const std::vector<Mat>& inputs, const Builder& build, double tol = 1e-7) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Mat& m : inputs) vars.push_back(tape.variable(m));
  const ad::Var out = build(vars);
  const std::vector<Mat> grads = tape.gradient(out, vars);

  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      auto eval = [&](double delta) {
        std::vector<Mat> shifted = inputs;
        shifted[k].data()[e] += delta;
        ad::Tape t2;
        std::vector<ad::Var> v2;
        for (const Mat& m : shifted) v2.push_back(t2.variable(m));
        return build(v2).scalar();
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      const double an = grads[k].data()[e];
      CHECK(std::abs(an - fd) <= tol * std::max(1.0, std::abs(fd)));
    }
  }
}

}  // namespace

TEST_CASE("elementary op gradients match finite differences") {
  RngStream rng(101);
  const Mat a = rng.normal_mat(3, 4);
  const Mat b = rng.normal_mat(3, 4);
  const Mat c = rng.normal_mat(4, 2);
  const Mat s = Mat(1, 1, 1.7);
  const Mat g = rng.normal_mat(3, 1);

  check_gradient({a, b}, [](auto& v) { return ad::sum(ad::hadamard(ad::add(v[0], v[1]), v[0])); });
  check_gradient({a, b}, [](auto& v) { return ad::frob_inner(ad::sub(v[0], v[1]), v[1]); });
  check_gradient({a, c}, [](auto& v) { return ad::sum(ad::square(ad::matmul(v[0], v[1]))); });
  check_gradient({a}, [](auto& v) { return ad::sum(ad::square(ad::transpose(ad::scale(v[0], -2.5)))); });
  check_gradient({a, s}, [](auto& v) { return ad::sum(ad::square(ad::mul(v[0], v[1]))); });
  check_gradient({a, s}, [](auto& v) { return ad::sum(ad::square(ad::div(v[0], v[1]))); });
  check_gradient({a, g}, [](auto& v) { return ad::sum(ad::square(ad::row_scale(v[0], v[1]))); });
  check_gradient({a, s}, [](auto& v) { return ad::sum(ad::square(ad::sub_scalar(v[0], v[1]))); });
  check_gradient({a}, [](auto& v) { return ad::square(ad::mean(ad::square(v[0]))); });
  check_gradient({a}, [](auto& v) { return ad::sum(ad::softplus(v[0])); });
  check_gradient({a}, [](auto& v) { return ad::frob_norm(v[0]); });
  check_gradient({a}, [](auto& v) { return ad::square(ad::entry(v[0], 2, 1)); });
  check_gradient({a}, [](auto& v) { return ad::logsumexp(ad::column_slice(v[0], 0, 3, 2)); });
  check_gradient({a}, [](auto& v) { return ad::sum(ad::sqrt(ad::square(ad::neg(v[0])))); });
}

TEST_CASE("floor_max blocks gradient where the floor is active") {
  ad::Tape tape;
  const ad::Var x = tape.variable(Mat::from_rows({{0.5, 2.0}}));
  const ad::Var y = ad::sum(ad::floor_max(x, 1.0));
  CHECK(y.scalar() == 3.0);
  const auto g = tape.gradient(y, std::vector<ad::Var>{x});
  CHECK(g[0](0, 0) == 0.0);
  CHECK(g[0](0, 1) == 1.0);
}

TEST_CASE("frob_norm gradient at zero is zero") {
  ad::Tape tape;
  const ad::Var x = tape.variable(Mat(2, 2));
  const auto g = tape.gradient(ad::frob_norm(x), std::vector<ad::Var>{x});
  CHECK(frob_norm(g[0]) == 0.0);
}

TEST_CASE("unreached inputs and constants") {
  ad::Tape tape;
  const ad::Var x = tape.variable(Mat(2, 3, 1.0));
  const ad::Var unused = tape.variable(Mat(1, 4, 2.0));
  const ad::Var c = tape.constant(Mat(2, 3, 5.0));
  const ad::Var y = ad::frob_inner(x, c);
  const auto g = tape.gradient(y, std::vector<ad::Var>{x, unused, c});
  CHECK(g[0] == Mat(2, 3, 5.0));
  CHECK(g[1] == Mat(1, 4));
  CHECK(g[2] == Mat(2, 3));
}

TEST_CASE("repeated gradient calls on one tape agree") {
  ad::Tape tape;
  const ad::Var x = tape.variable(Mat::from_rows({{1.0, -2.0}}));
  const ad::Var y = ad::sum(ad::square(x));
  const auto g1 = tape.gradient(y, std::vector<ad::Var>{x});
  const auto g2 = tape.gradient(y, std::vector<ad::Var>{x});
  CHECK(g1[0] == g2[0]);
  CHECK(g1[0] == Mat::from_rows({{2.0, -4.0}}));
}

TEST_CASE("tape rejects non-finite values and mismatched shapes") {
  ad::Tape tape;
  const ad::Var x = tape.variable(Mat(1, 1, 0.0));
  CHECK_THROWS_AS(ad::div(x, x), Error);
  const ad::Var a = tape.variable(Mat(2, 2, 1.0));
  CHECK_THROWS_AS(ad::mul(a, a), Error);
  CHECK_THROWS_AS(tape.gradient(a, std::vector<ad::Var>{a}), Error);
}
