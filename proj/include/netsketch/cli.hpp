#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace netsketch::cli {

/// Default RNG seed for every command, so published desk-scale numbers
/// reproduce without extra flags.
inline constexpr std::uint64_t kDefaultSeed = 1729;

enum ExitCode : int {
    exit_ok = 0,
    exit_verify = 1,  // a checked invariant or checksum failed
    exit_usage = 2,
    exit_io = 3,
};

/// Full command-line front end. Streams make the surface testable; the
/// binary passes std::cout / std::cerr.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace netsketch::cli
