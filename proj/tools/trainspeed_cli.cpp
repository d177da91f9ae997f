#include <iostream>
#include <string>
#include <vector>

#include "trainspeed/cli.hpp"

int main(int argc, char** argv) {
  return trainspeed::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
