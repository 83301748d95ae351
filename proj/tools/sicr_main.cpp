#include <iostream>
#include <string>
#include <vector>

#include "sicr/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sicr::cli::run_cli(args, std::cout, std::cerr);
}
