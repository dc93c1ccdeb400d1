#include <string>
#include <vector>

#include "conviction/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return conviction::cli::run(args);
}
