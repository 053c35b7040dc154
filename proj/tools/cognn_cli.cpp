#include <iostream>

#include "cognn/cli.hpp"

int main(int argc, char** argv) { return cognn::cli::dispatch(argc, argv, std::cout, std::cerr); }
