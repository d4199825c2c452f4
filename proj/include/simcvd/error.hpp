#pragma once

#include <stdexcept>
#include <string>

namespace simcvd {

/// Diagnostic category, mapped to process exit codes by the CLI.
enum class ErrorCategory { kInvalidArgument = 2, kShape = 3, kNumerical = 4, kIo = 5, kState = 6 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what) : std::runtime_error(what), category_(category) {}
    [[nodiscard]] ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& what) : Error(ErrorCategory::kInvalidArgument, what) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(ErrorCategory::kShape, what) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error(ErrorCategory::kNumerical, what) {}
};
struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};
struct StateError : Error {
    explicit StateError(const std::string& what) : Error(ErrorCategory::kState, what) {}
};

}  // namespace simcvd
