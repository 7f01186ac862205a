#include "salforge/cli.hpp"

int main(int argc, char** argv) {
  return salforge::cli::dispatch(argc, argv);
}
