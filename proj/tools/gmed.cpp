#include "gmed/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return gmed::cli::run(argc, argv, std::cout, std::cerr); }
