#include "icot_cli.hpp"

int main(int argc, char** argv) { return icot::cli::run_cli(argc, argv); }
