#include <iostream>
#include <string>
#include <vector>

#include "mlmtest/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return mlmtest::run_cli(args, std::cout, std::cerr);
}
