#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return vid2act::run_cli(argc, argv, std::cout, std::cerr); }
