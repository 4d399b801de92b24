#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qatriage {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A vector or matrix did not have the size an operation required.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& context, std::size_t expected, std::size_t actual)
      : Error(context + ": expected dimension " + std::to_string(expected) + ", got " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Training produced a non-finite loss.
class DivergedError : public Error {
 public:
  DivergedError(std::size_t epoch, std::size_t step)
      : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
              ", step " + std::to_string(step)),
        epoch_(epoch),
        step_(step) {}

  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

/// A text input (CSV file, config file) could not be parsed. Carries the
/// 1-based line number of the offending line.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& message)
      : Error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace qatriage
