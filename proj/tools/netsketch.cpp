#include "netsketch/cli.hpp"

int main(int argc, char** argv) { return netsketch::cli::run(argc, argv); }
