#include <cmath>
#include <limits>

#include "doctest.h"
#include "ofa/error.hpp"
#include "ofa/serialization.hpp"

using namespace ofa;

TEST_CASE("format_double round trips exactly") {
  RngStream rng(110);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.normal() * std::pow(10.0, static_cast<int>(rng.below(40)) - 20);
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig c;
  c.d = 3;
  c.n_demos = 5;
  c.layers = 2;
  c.eta = 0.1 / 3;
  c.mean_subtract = true;
  PreconditionerSet p = PreconditionerSet::ones(c);
  RngStream rng(111);
  for (Vec& g : p.gains)
    for (double& x : g) x = rng.normal();
  const Checkpoint ck = parse_checkpoint(checkpoint_json(c, p));
  CHECK(ck.model_cfg.eta == c.eta);
  CHECK(ck.model_cfg.mean_subtract);
  CHECK(ck.model_cfg.layers == 2);
  CHECK(ck.precond.flatten() == p.flatten());
  CHECK(checkpoint_json(ck.model_cfg, ck.precond) == checkpoint_json(c, p));
}

TEST_CASE("suite round trip") {
  TaskSpec s;
  s.d = 2;
  s.n_demos = 3;
  s.cov_spectrum = {1.5, 0.25};
  s.noise_std = 0.1;
  const auto suite = sample_suite(s, 4, RngStream(112));
  const auto back = parse_suite(suite_json(suite));
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].weights == suite[i].weights);
    CHECK(back[i].xs == suite[i].xs);
    CHECK(back[i].ys == suite[i].ys);
    CHECK(back[i].y_star == suite[i].y_star);
    CHECK(embed_prompt(back[i]) == embed_prompt(suite[i]));
  }
}

TEST_CASE("parse errors") {
  auto code_of = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::validation_error;
  };
  CHECK(code_of([] { parse_checkpoint("{not json"); }) == Errc::parse_error);
  CHECK(code_of([] { parse_checkpoint("{\"d\": 2}"); }) == Errc::parse_error);
  CHECK(code_of([] { parse_suite("[{\"kind\": \"regression\"}]"); }) == Errc::parse_error);
  CHECK(code_of([] { read_text_file("/nonexistent/file.json"); }) == Errc::missing_file);
}

TEST_CASE("csv field quoting") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
}
