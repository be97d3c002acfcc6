#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ofa {

enum class Errc {
  invalid_spec,
  shape_mismatch,
  non_square,
  not_symmetric,
  not_symmetrizable,
  non_finite,
  too_few_layers,
  at_optimum,
  degenerate_labels,
  diverged,
  missing_file,
  parse_error,
  validation_error,
};

std::string_view to_string(Errc code);

/// Exception type used throughout the library. The code identifies the
/// failure class; what() carries a human-readable detail message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ofa
