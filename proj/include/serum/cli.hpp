#pragma once

#include <string>

#include "serum/eval.hpp"

namespace serum::cli {

inline constexpr const char* kToolVersion = "1.0.0";

// Dispatches a full command line; returns the process exit status. Module
// errors become structured single-line diagnostics on stderr plus a
// FAILED.json marker in the output directory.
int run(int argc, const char* const* argv);

// Human table (Average first, then conditions in canonical order) or the
// machine-readable JSON document; both render the same numbers.
std::string report_render(const eval::EvalReport& report, const std::string& format);

}  // namespace serum::cli
