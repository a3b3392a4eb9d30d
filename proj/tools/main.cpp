#include "urbancausal/cli.hpp"

int main(int argc, char** argv) { return urbancausal::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
