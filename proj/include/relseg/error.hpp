#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InfeasibleSpecError : public Error {
 public:
  using Error::Error;
};

class CorruptManifestError : public Error {
 public:
  CorruptManifestError(std::size_t record, const std::string& what)
      : Error("corrupt manifest record " + std::to_string(record) + ": " + what),
        record_(record) {}
  std::size_t record() const { return record_; }

 private:
  std::size_t record_;
};

class DegenerateBoxError : public Error {
 public:
  DegenerateBoxError(std::size_t index)
      : Error("degenerate box at index " + std::to_string(index)), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Raised when a loss component becomes NaN or infinite.
class NumericError : public Error {
 public:
  NumericError(const std::string& component, double value)
      : Error("non-finite loss component '" + component + "' (" + std::to_string(value) + ")"),
        component_(component) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

}  // namespace relseg
