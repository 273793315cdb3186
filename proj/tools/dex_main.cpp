#include <iostream>

#include "dex/cli.hpp"

int main(int argc, char** argv) { return dex::cli::run(argc, argv, std::cout, std::cerr); }
