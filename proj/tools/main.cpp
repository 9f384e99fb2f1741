#include <iostream>

#include "apap_cli/cli.hpp"

int main(int argc, char** argv) {
  return apap::cli::run_cli(argc, argv, std::cout, std::cerr);
}
