#include "ofa_cli/commands.hpp"

int main(int argc, char** argv) { return ofa::cli::run_main(argc, argv); }
