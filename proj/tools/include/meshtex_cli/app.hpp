#pragma once

// Command-line front end. `meshtex <command> [inputs] [flags]`; see
// `meshtex --help`.

#include <iosfwd>
#include <string>
#include <vector>

namespace meshtex::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitInternal = 1;

inline constexpr const char* kRunManifestName = "run.manifest";

// args excludes the program name. Normal output goes to `out`, diagnostics
// to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace meshtex::cli
