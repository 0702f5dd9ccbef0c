#include <iostream>

#include "wardsim/cli.hpp"

int main(int argc, char** argv) { return wardsim::cli::run(argc, argv, std::cout, std::cerr); }
