#include <filesystem>
#include <string>

#include "doctest.h"
#include "ofa/error.hpp"
#include "ofa/serialization.hpp"
#include "ofa_cli/commands.hpp"
#include "ofa_cli/config.hpp"

using namespace ofa;
using namespace ofa::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ofa_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Error error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected an error");
  return Error(Errc::invalid_spec, "");
}

}  // namespace

TEST_CASE("minimal config resolves every default") {
  const RunConfig c = parse_config_text("{\"seed\": 1}");
  CHECK(c.seed == 1);
  CHECK(c.train_cfg.seed == 1);
  CHECK(c.model_cfg.layers == default_config().model_cfg.layers);
  CHECK(c.train_task.cov_spectrum.size() == c.model_cfg.d);
  const RunConfig back = parse_config_text(resolved_json(c));
  CHECK(resolved_json(back) == resolved_json(c));
}

TEST_CASE("negative lambda names the field") {
  const Error e = error_of("{\"train_cfg\": {\"lambda1\": -0.5}}");
  CHECK(e.code() == Errc::validation_error);
  CHECK(std::string(e.what()).find("train_cfg.lambda1") != std::string::npos);
}

TEST_CASE("unknown keys are rejected by path") {
  const Error e = error_of("{\"train_cfg\": {\"lamda1\": 0.1}}");
  CHECK(e.code() == Errc::validation_error);
  CHECK(std::string(e.what()).find("train_cfg.lamda1") != std::string::npos);
  CHECK(error_of("{\"bogus\": 1}").code() == Errc::validation_error);
}

TEST_CASE("type and cross-field errors") {
  CHECK(std::string(error_of("{\"model_cfg\": {\"layers\": \"four\"}}").what()).find("model_cfg.layers") !=
        std::string::npos);
  CHECK(std::string(error_of("{\"model_cfg\": {\"d\": 2}, \"train_task\": {\"cov_spectrum\": [1]}}").what())
            .find("train_task") != std::string::npos);
  CHECK(error_of("{\"model_cfg\": {\"layers\": 1}, \"train_cfg\": {\"lambda1\": 0.1}}").code() ==
        Errc::validation_error);
  CHECK_NOTHROW(parse_config_text("{\"model_cfg\": {\"layers\": 1}, \"train_cfg\": {\"lambda1\": 0}}"));
}

TEST_CASE("malformed JSON reports line and column") {
  const Error e = error_of("{\n  \"seed\": 1,\n  oops\n}");
  CHECK(e.code() == Errc::parse_error);
  CHECK(std::string(e.what()).find("line 3, column 3") != std::string::npos);
}

TEST_CASE("missing config file") {
  try {
    parse_config("/nonexistent/config.json");
    FAIL("expected MissingFile");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_file);
  }
}

TEST_CASE("oracle-check smoke path") {
  const fs::path dir = scratch("oc");
  CommandArgs a;
  a.seed = 7;
  a.out_dir = dir.string();
  CHECK(dispatch("oracle-check", a) == kExitOk);
  CHECK(fs::exists(dir / "oracle_check.csv"));
  CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("train writes a replayable run directory and is deterministic") {
  const fs::path root = scratch("train");
  write_text_file((root / "cfg.json").string(),
                  "{\"seed\": 3, \"model_cfg\": {\"d\": 2, \"n_demos\": 4, \"layers\": 3},"
                  " \"train_cfg\": {\"epochs\": 3, \"train_tasks\": 8, \"eval_tasks\": 4, \"batch_size\": 4}}");
  CommandArgs a;
  a.config_path = (root / "cfg.json").string();
  a.out_dir = (root / "a").string();
  a.threads = 1;
  REQUIRE(dispatch("train", a) == kExitOk);
  a.out_dir = (root / "b").string();
  a.threads = 3;
  REQUIRE(dispatch("train", a) == kExitOk);
  for (const char* f : {"resolved_config.json", "metrics.csv", "checkpoint.json", "manifest.json", "bound.json"}) {
    CHECK(fs::exists(root / "a" / f));
  }
  CHECK(read_text_file((root / "a/metrics.csv").string()) == read_text_file((root / "b/metrics.csv").string()));
  CHECK(read_text_file((root / "a/checkpoint.json").string()) ==
        read_text_file((root / "b/checkpoint.json").string()));
  // The echoed config replays the same run.
  a.config_path = (root / "a/resolved_config.json").string();
  a.out_dir = (root / "c").string();
  REQUIRE(dispatch("train", a) == kExitOk);
  CHECK(read_text_file((root / "a/metrics.csv").string()) == read_text_file((root / "c/metrics.csv").string()));

  CommandArgs d;
  d.config_path = (root / "cfg.json").string();
  d.out_dir = (root / "a").string();
  d.report = "sharpness";
  CHECK(dispatch("diagnose", d) == kExitOk);
  CHECK(fs::exists(root / "a/profile.csv"));
  CHECK(fs::exists(root / "a/diagnose_manifest.json"));
  CHECK(dispatch("eval", d) == kExitOk);
  CHECK(dispatch("plot", d) == kExitOk);
  CHECK(fs::exists(root / "a/loss.svg"));
}

TEST_CASE("exit codes") {
  CommandArgs a;
  a.config_path = "/nonexistent/config.json";
  CHECK(dispatch("train", a) == kExitValidation);
  CHECK(dispatch("frobnicate", CommandArgs{}) == kExitValidation);
  const fs::path dir = scratch("gap");
  CommandArgs g;
  g.out_dir = dir.string();
  g.report = "gap";
  CHECK(dispatch("diagnose", g) == kExitValidation);
}

TEST_CASE("gradcheck subcommand") {
  const fs::path dir = scratch("gc");
  CommandArgs a;
  a.out_dir = dir.string();
  a.trials = 3;
  CHECK(dispatch("gradcheck", a) == kExitOk);
  CHECK(fs::exists(dir / "gradcheck.csv"));
}
