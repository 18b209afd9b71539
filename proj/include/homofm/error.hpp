#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace homofm {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value fell outside the domain of an operation (log of a non-positive
/// value, t outside [0,1], ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Rank-deficient or otherwise degenerate geometric configuration.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// A point whose homogeneous denominator vanishes under a homography.
class DegeneratePointError : public DegeneracyError {
 public:
  DegeneratePointError(std::size_t index, double x, double y);
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t step);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t iteration);
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace homofm
