#include <iostream>

#include "biasscope/cli.hpp"

int main(int argc, char** argv) { return biasscope::dispatch(argc, argv, std::cout, std::cerr); }
