#include <iostream>
#include <string>
#include <vector>

#include "trips/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return trips::run_cli(args, std::cout, std::cerr);
}
