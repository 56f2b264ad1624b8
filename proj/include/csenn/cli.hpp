#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "csenn/model.hpp"

namespace csenn {

// Exit codes: 0 success, 1 runtime failure, 2 configuration/schema error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Entry point shared by the csenn executable and the Python module. `args`
// excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Table-1 display name of a variant ("C-SENN", "Vanilla", ...).
std::string display_name(Variant v);

}  // namespace csenn
