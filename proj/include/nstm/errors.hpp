#pragma once

#include <stdexcept>
#include <string>

namespace nstm {

// Process exit codes used by the CLI.
enum class ExitCode : int { Ok = 0, Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string &what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

struct UsageError : Error {
  explicit UsageError(const std::string &what) : Error(ExitCode::Usage, what) {}
};

// Malformed files, bad inputs, missing artifacts.
struct DataError : Error {
  explicit DataError(const std::string &what) : Error(ExitCode::Data, what) {}
};

// Non-convergence, non-finite activations, broken invariants in numeric code.
struct NumericError : Error {
  explicit NumericError(const std::string &what) : Error(ExitCode::Numeric, what) {}
};

}  // namespace nstm
