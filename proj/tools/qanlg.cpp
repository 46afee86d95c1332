#include <iostream>
#include <string>
#include <vector>

#include "qanlg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return qanlg::run_cli(args, std::cout, std::cerr);
}
