#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssdesc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// File contents do not follow the expected format (bad magic, bit depth, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Binary archive ended early or failed its checksum.
class CorruptionError : public FormatError {
 public:
  CorruptionError(const std::string& what, std::size_t offset)
      : FormatError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Text input could not be parsed; carries the 1-based line number.
class ParseError : public FormatError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An argument is outside the accepted range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image extents disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Crop window leaves the image.
class BorderError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: singular matrices, vanishing denominators, non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class SingularProjectionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Point configuration does not determine a homography.
class DegeneracyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// RANSAC did not reach the consensus floor.
class NoModelError : public NumericalError {
 public:
  NoModelError(const std::string& what, std::size_t best_count)
      : NumericalError(what + " (best consensus " + std::to_string(best_count) + ")"),
        best_count_(best_count) {}
  std::size_t best_count() const noexcept { return best_count_; }

 private:
  std::size_t best_count_;
};

/// Dataset, batch, or configuration cannot support the requested operation.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssdesc
