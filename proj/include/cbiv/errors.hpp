#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cbiv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, out-of-range settings, incompatible model kinds.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity appeared. `where` is a layer index, epoch or step,
// depending on the caller; -1 when not applicable.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, long where = -1)
      : Error(what), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnavailableOracleError : public Error {
 public:
  using Error::Error;
};

// One treatment arm carries (numerically) no weight.
class DegenerateArmError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbiv
