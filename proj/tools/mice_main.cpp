#include <iostream>

#include "mice/cli.hpp"

int main(int argc, char** argv) { return mice::dispatch(argc, argv, std::cout, std::cerr); }
