#include <iostream>

#include "encfm/cli.hpp"

int main(int argc, char** argv) { return encfm::cli::run(argc, argv, std::cout, std::cerr); }
