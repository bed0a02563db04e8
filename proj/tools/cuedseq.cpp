#include "cuedseq/cli.hpp"

int main(int argc, char** argv) {
  return cuedseq::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
