#include <iostream>

#include "phylokit/cli.hpp"

int main(int argc, char** argv) { return phylokit::cli::dispatch(argc, argv, std::cout, std::cerr); }
