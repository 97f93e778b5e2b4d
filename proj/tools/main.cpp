#include <iostream>

#include "ssgrn/cli.hpp"

int main(int argc, char** argv) { return ssgrn::cli::run(argc, argv, std::cout, std::cerr); }
