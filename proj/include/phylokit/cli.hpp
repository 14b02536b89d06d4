#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace phylokit::cli {

// Runs one subcommand. Exit codes: 0 success, 1 data or model error, 2 usage error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::string version();

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Cell-by-cell comparison of every CSV in `reference` against the file of the
// same name in `candidate`; other files except manifest.json must match byte for byte.
struct DirComparison {
    std::size_t files = 0;
    std::size_t values = 0;
    double max_abs_diff = 0.0;
    std::vector<std::string> problems;  // missing files, shape or text mismatches
};

DirComparison compare_outputs(const std::filesystem::path& reference, const std::filesystem::path& candidate);

}  // namespace phylokit::cli
