#pragma once

#include <string>
#include <vector>

#include "ofa/model.hpp"
#include "ofa/tasks.hpp"

namespace ofa {

/// %.17g, which round-trips every finite double exactly.
std::string format_double(double x);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

struct Checkpoint {
  ModelConfig model_cfg;
  PreconditionerSet precond;
};

/// JSON with the model config fields and the gains as nested arrays.
std::string checkpoint_json(const ModelConfig& cfg, const PreconditionerSet& precond);
Checkpoint parse_checkpoint(const std::string& text);

std::string suite_json(const std::vector<TaskInstance>& suite);
std::vector<TaskInstance> parse_suite(const std::string& text);

/// Quotes a CSV field if it contains a comma, quote or newline.
std::string csv_field(const std::string& s);

}  // namespace ofa
