#pragma once

#include <stdexcept>
#include <string>

namespace delta {

// Exit-code contract: 0 success, 1 usage error, 2 data error, 3 numeric failure.
class Error : public std::runtime_error {
public:
  Error(std::string msg, int exit_code) : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

private:
  int exit_code_;
};

class UsageError : public Error {
public:
  explicit UsageError(std::string msg) : Error(std::move(msg), 1) {}
};

class DataError : public Error {
public:
  explicit DataError(std::string msg) : Error(std::move(msg), 2) {}
};

// Shape mismatches between kernel inputs, bad graph wiring, etc.
class ShapeError : public Error {
public:
  explicit ShapeError(std::string msg) : Error(std::move(msg), 2) {}
};

class NumericError : public Error {
public:
  explicit NumericError(std::string msg) : Error(std::move(msg), 3) {}
};

} // namespace delta
