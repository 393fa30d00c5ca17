#include <iostream>

#include "stsc/cli.hpp"

int main(int argc, char** argv) {
  return stsc::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
