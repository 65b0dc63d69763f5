#include <iostream>
#include <string>
#include <vector>

#include "geval/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return geval::cli::run(args, std::cout, std::cerr);
}
