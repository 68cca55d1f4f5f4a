#include <iostream>

#include "udagcn/cli.hpp"

int main(int argc, char** argv) { return udagcn::run(argc, argv, std::cout, std::cerr); }
