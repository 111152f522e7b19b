#include <vector>

#include "lw/cli.hpp"

int main(int argc, char** argv) {
  return lw::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
