#include <iostream>

#include "hcg/cli.hpp"

int main(int argc, char** argv) {
  return hcg::run_cli(argc, argv, std::cout, std::cerr);
}
