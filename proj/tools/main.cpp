#include "cli_impl.hpp"

int main(int argc, char** argv) { return fadebif::cli::run_cli(argc, argv); }
