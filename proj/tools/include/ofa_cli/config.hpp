#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ofa/model.hpp"
#include "ofa/tasks.hpp"
#include "ofa/training.hpp"

namespace ofa::cli {

struct DiagnosticsOptions {
  /// Tasks the probes are fit on and tasks the profile is averaged over.
  std::size_t probe_tasks = 128;
  std::size_t eval_tasks = 64;
  std::size_t n_probes = 256;
  /// Checkpoint used by eval and diagnose; empty means unit gains.
  std::string checkpoint;
  /// Run directories compared by `diagnose --report gap`.
  std::vector<std::string> runs;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model_cfg;
  TaskSpec train_task;
  TaskSpec eval_task;
  TrainConfig train_cfg;
  DiagnosticsOptions diagnostics;
  std::string out_dir = "runs/default";
};

/// Defaults for every field. Task dimensions follow model_cfg.
RunConfig default_config();

/// Parses and validates a JSON config. Unknown keys and bad values raise
/// Errc::validation_error with the dotted field path; malformed JSON raises
/// Errc::parse_error with line and column; a missing file raises
/// Errc::missing_file.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);

/// Cross-field checks, run after parsing and after flag overrides.
void validate(const RunConfig& cfg);

/// Canonical JSON of a resolved config, every field present.
std::string resolved_json(const RunConfig& cfg);

}  // namespace ofa::cli
