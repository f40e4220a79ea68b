#include <iostream>

#include "nst/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return nst::cli::run(args, std::cout, std::cerr);
}
