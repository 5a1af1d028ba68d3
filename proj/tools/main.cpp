#include "cli.hpp"

int main(int argc, char** argv) { return propensity::cli::run(argc, argv); }
