#include <iostream>

#include "a2t/cli.hpp"

int main(int argc, char** argv) { return a2t::cli::run(argc, argv, std::cout, std::cerr); }
