#include <iostream>

#include "sklab/lab_harness.hpp"

int main(int argc, char** argv) { return sklab::cli(argc, argv, std::cout, std::cerr); }
