#include <iostream>

#include "layerav/cli.hpp"

int main(int argc, char** argv) { return layerav::run_cli(argc, argv, std::cout, std::cerr); }
