#pragma once

// Command-line front end: gen, train, eval, faithfulness, variant-study,
// predict, gradient-check. Exit codes: 0 success, 1 usage error, 2 runtime
// error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace wbc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// FNV-1a over relative paths and bytes of every regular file under root, in
// sorted path order.
std::uint64_t directory_checksum(const std::filesystem::path& root);

}  // namespace wbc
