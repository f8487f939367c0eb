#include "spoofnet/cli.hpp"

int main(int argc, char** argv) {
  return spoofnet::cli::run({argv + 1, argv + argc});
}
