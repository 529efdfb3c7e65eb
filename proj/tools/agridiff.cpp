#include <iostream>

#include "agridiff/cli.hpp"

int main(int argc, char** argv) {
  return agridiff::cli::run_cli(argc, argv, std::cout, std::cerr);
}
