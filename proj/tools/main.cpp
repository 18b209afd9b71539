#include <iostream>

#include "homofm/cli/cli.hpp"

int main(int argc, char** argv) {
  return homofm::cli::cli_dispatch(argc, argv, std::cout, std::cerr);
}
