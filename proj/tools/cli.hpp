#pragma once

// posekit command-line front end. `run` is the whole program minus the
// process boundary so tests can call it in-process.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace posekit::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kParse = 3,
    kPrecondition = 4,
};

/// `args[0]` is the program name.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace posekit::cli
