#include <iostream>
#include <string>
#include <vector>

#include "ser/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ser::cli::run(args, std::cout, std::cerr);
}
