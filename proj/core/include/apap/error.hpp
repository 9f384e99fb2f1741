#pragma once

#include <stdexcept>
#include <string>

namespace apap {

/// Broad failure categories. The CLI maps these onto process exit codes.
enum class ErrorCategory {
  kInvalidInput,
  kIo,
  kNumerical,
  kGuidance,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class InvalidInputError : public Error {
 public:
  explicit InvalidInputError(const std::string& what)
      : Error(ErrorCategory::kInvalidInput, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

/// OBJ / JSON / PNG content that could not be understood.
class ParseError : public IoError {
 public:
  explicit ParseError(const std::string& what) : IoError(what) {}
};

class DegenerateFaceError : public InvalidInputError {
 public:
  DegenerateFaceError(int face, double area)
      : InvalidInputError("degenerate face " + std::to_string(face) +
                          " (area " + std::to_string(area) + ")"),
        face_(face) {}

  int face() const noexcept { return face_; }

 private:
  int face_;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorCategory::kNumerical, what) {}
};

/// Cholesky failed, or a connected component carries no constraint.
class FactorizationError : public NumericalError {
 public:
  explicit FactorizationError(const std::string& what) : NumericalError(what) {}
};

class GuidanceError : public Error {
 public:
  explicit GuidanceError(const std::string& what)
      : Error(ErrorCategory::kGuidance, what) {}
};

class TransportError : public GuidanceError {
 public:
  explicit TransportError(const std::string& what) : GuidanceError(what) {}
};

class MalformedResponseError : public GuidanceError {
 public:
  explicit MalformedResponseError(const std::string& what)
      : GuidanceError(what) {}
};

class NonFinitePayloadError : public GuidanceError {
 public:
  explicit NonFinitePayloadError(const std::string& what)
      : GuidanceError(what) {}
};

}  // namespace apap
