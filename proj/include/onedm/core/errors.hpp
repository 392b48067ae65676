#pragma once
#include <stdexcept>
#include <string>

namespace onedm {

// CLI exit codes: 1 usage, 2 data integrity, 3 numerical
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace onedm
