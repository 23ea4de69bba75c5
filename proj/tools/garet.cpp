#include "garet/cli.hpp"

int main(int argc, char** argv) { return garet::cli::run_cli(argc, argv); }
