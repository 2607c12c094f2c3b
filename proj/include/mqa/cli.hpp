#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mqa::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;           // bad arguments or configuration
inline constexpr int kQualityCeiling = 3;  // failure rate above the configured ceiling
inline constexpr int kBackendOutage = 4;   // backend unreachable

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mqa::cli
