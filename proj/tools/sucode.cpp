#include <iostream>
#include <string>
#include <vector>

#include "sucode/cli.hpp"

int main(int argc, char** argv) {
  return sucode::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
