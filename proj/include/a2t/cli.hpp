#pragma once

#include <iosfwd>

namespace a2t::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kBackendUnreachable = 2,
  kBadImage = 3,  // unreadable image or image/attention shape mismatch
  kFailure = 4,   // anything else (e.g. unanswerable question)
};

/// Entry point shared by the a2t executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace a2t::cli
