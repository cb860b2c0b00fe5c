#include <vector>

#include "molmix/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return molmix::run_cli(args);
}
