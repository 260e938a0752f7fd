#include <iostream>

#include "blindcal/cli.hpp"

int main(int argc, char** argv) { return blindcal::cli::dispatch(argc, argv, std::cout, std::cerr); }
