#pragma once

#include <stdexcept>
#include <string>

namespace sunet {

// Error categories map 1:1 onto CLI exit codes (usage=2, data=3, numerical=4).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataFormatError : std::runtime_error {
  explicit DataFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sunet
