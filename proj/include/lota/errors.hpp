#pragma once

#include <stdexcept>
#include <string>

namespace lota {

// Base of every error raised by the library. `kind()` is a stable
// machine-readable tag used by the CLI's JSON error objects.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string & message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string & kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

// Input rejected: misaligned maps, malformed files, digest mismatch.
class ValidationError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public ValidationError {
public:
    explicit AlignmentError(const std::string & message) : ValidationError("misalignment", message) {}
};

class FormatError : public ValidationError {
public:
    FormatError(const std::string & kind, const std::string & message) : ValidationError(kind, message) {}
};

class DigestMismatch : public ValidationError {
public:
    explicit DigestMismatch(const std::string & message) : ValidationError("digest_mismatch", message) {}
};

// Computation failed while running: divergence, non-finite results, I/O.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public RuntimeFailure {
public:
    explicit NonFiniteError(const std::string & message) : RuntimeFailure("non_finite", message) {}
};

class IoError : public RuntimeFailure {
public:
    explicit IoError(const std::string & message) : RuntimeFailure("io", message) {}
};

} // namespace lota
