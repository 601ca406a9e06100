#include "diffcap/cli.hpp"
#include "diffcap/types.hpp"

#include <iostream>

int main(int argc, char** argv) {
  diffcap::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return diffcap::run_cli(args, std::cout, std::cerr);
}
