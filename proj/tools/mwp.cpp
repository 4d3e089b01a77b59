#include "mwp/cli.hpp"

int main(int argc, char** argv) { return mwp::cli::run_command(argc, argv); }
