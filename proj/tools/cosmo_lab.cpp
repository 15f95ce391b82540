#include "cosmo/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cosmo::cli::run(argc, argv, std::cout, std::cerr); }
