#include "ofa/error.hpp"

namespace ofa {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_spec: return "InvalidSpec";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::non_square: return "NonSquare";
    case Errc::not_symmetric: return "NotSymmetric";
    case Errc::not_symmetrizable: return "NotSymmetrizable";
    case Errc::non_finite: return "NonFinite";
    case Errc::too_few_layers: return "TooFewLayers";
    case Errc::at_optimum: return "AtOptimum";
    case Errc::degenerate_labels: return "DegenerateLabels";
    case Errc::diverged: return "Diverged";
    case Errc::missing_file: return "MissingFile";
    case Errc::parse_error: return "ParseError";
    case Errc::validation_error: return "ValidationError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

}  // namespace ofa
