#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "serve.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hybrid::cli::run_command(args, std::cout, std::cerr, hybrid::cli::serve_http);
}
