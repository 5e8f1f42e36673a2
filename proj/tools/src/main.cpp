#include <iostream>
#include <string>
#include <vector>

#include "fmri_s4_cli/app.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return fmri_s4::cli::run(args, std::cout, std::cerr);
}
