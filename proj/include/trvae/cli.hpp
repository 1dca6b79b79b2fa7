#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace trvae::cli {

enum ExitCode : int {
    kOk = 0,
    kGradcheckFailed = 1,
    kConfigError = 2,
    kDataError = 3,
    kNumericError = 4,
};

/// Runs the command line `args` (without the program name). Errors are reported on `err`
/// and mapped onto ExitCode; nothing throws out of here.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace trvae::cli
