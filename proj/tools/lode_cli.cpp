#include "lode/cli/app.hpp"

int main(int argc, char** argv) { return lode::cli::run_cli(argc, argv); }
