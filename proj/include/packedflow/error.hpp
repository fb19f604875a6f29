#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace packedflow {

// Base of every error raised by the library. Callers that only care about
// success/failure catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Array shapes disagree with the layer plans.
class ShapeError : public Error {
 public:
  ShapeError(std::optional<std::size_t> layer, const std::string& what)
      : Error(layer ? "layer " + std::to_string(*layer) + ": " + what : what), layer_(layer) {}

  std::optional<std::size_t> layer() const { return layer_; }

 private:
  std::optional<std::size_t> layer_;
};

// Malformed simulation file. Row is 1-based and counts the header as row 1.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t row, std::string column, const std::string& what)
      : Error(file + ":" + std::to_string(row) + (column.empty() ? "" : " [" + column + "]") + ": " + what),
        file_(std::move(file)),
        row_(row),
        column_(std::move(column)) {}

  const std::string& file() const { return file_; }
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::string file_;
  std::size_t row_;
  std::string column_;
};

// A Simulation/Dataset invariant does not hold.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Optimization failed (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

// A metric is mathematically undefined for the given inputs.
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace packedflow
