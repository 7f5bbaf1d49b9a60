#include <iostream>

#include "adrbc/cli.h"

int main(int argc, char** argv) { return adrbc::cli::run(argc, argv, std::cout, std::cerr); }
