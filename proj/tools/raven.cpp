#include <iostream>

#include "raven/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return raven::run_command(args, std::cout, std::cerr);
}
