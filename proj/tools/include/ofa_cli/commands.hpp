#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

namespace ofa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct CommandArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::size_t trials = 20;
  std::string report = "sharpness";
};

/// Runs one subcommand and maps failures onto exit codes.
int dispatch(const std::string& subcommand, const CommandArgs& args);

/// Full command line entry point (argv[1] is the subcommand).
int run_main(int argc, char** argv);

}  // namespace ofa::cli
