#include <iostream>
#include <string>
#include <vector>

#include "batchconf/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return batchconf::RunCli(args, std::cout, std::cerr);
}
