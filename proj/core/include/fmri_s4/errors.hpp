#pragma once

#include <stdexcept>
#include <string>

namespace fmri_s4 {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ssm_core
class SingularDiscretization : public Error { using Error::Error; };
class InvalidStep : public Error { using Error::Error; };
class DimensionMismatch : public Error { using Error::Error; };
class Overflow : public Error { using Error::Error; };

// s4_kernel
class InvalidDimension : public Error { using Error::Error; };
class EigenFailure : public Error { using Error::Error; };
class InvalidRange : public Error { using Error::Error; };
class ResonanceFailure : public Error { using Error::Error; };
class PoleError : public Error { using Error::Error; };

// nn_layers
class ShapeMismatch : public Error { using Error::Error; };
class EmptyMask : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };

// training
class InvalidLabel : public Error { using Error::Error; };
class DegenerateSplit : public Error { using Error::Error; };
class EmptyDataset : public Error { using Error::Error; };
class InsufficientData : public Error { using Error::Error; };
class InvalidConfig : public Error { using Error::Error; };

// data_io
class MissingFile : public Error { using Error::Error; };
class InconsistentRoiCount : public Error { using Error::Error; };
class BadHeader : public Error { using Error::Error; };
class InvalidSpan : public Error { using Error::Error; };
class InsufficientClassMembers : public Error { using Error::Error; };

/// Error tied to a cell of a delimited text file (zero-based row/column).
class LocatedError : public Error {
 public:
  LocatedError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what), row_(row), column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class ParseError : public LocatedError { using LocatedError::LocatedError; };
class NonFiniteValue : public LocatedError { using LocatedError::LocatedError; };

}  // namespace fmri_s4
