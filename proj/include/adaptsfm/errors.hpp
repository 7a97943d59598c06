#pragma once

#include <stdexcept>
#include <string>

namespace adaptsfm {

/// Input violated a shape or range precondition.
class InvalidInputError : public std::invalid_argument {
public:
    explicit InvalidInputError(const std::string& what) : std::invalid_argument(what) {}
};

/// A direction column of the decomposed weight is the zero vector.
class DegenerateDirectionError : public std::runtime_error {
public:
    explicit DegenerateDirectionError(const std::string& what) : std::runtime_error(what) {}
};

/// Matrix fails the rotation invariants (orthonormality, det +1).
class InvalidRotationError : public std::runtime_error {
public:
    explicit InvalidRotationError(const std::string& what) : std::runtime_error(what) {}
};

/// SVD input is rank deficient; no unique nearest rotation.
class DegenerateOrthogonalizationError : public std::runtime_error {
public:
    explicit DegenerateOrthogonalizationError(const std::string& what) : std::runtime_error(what) {}
};

/// Loss evaluated over an empty validity mask.
class NoValidPixelsError : public std::runtime_error {
public:
    explicit NoValidPixelsError(const std::string& what) : std::runtime_error(what) {}
};

/// NaN/Inf reached the objective; training must abort. CLI exit code 3.
class NonFiniteLossError : public std::runtime_error {
public:
    explicit NonFiniteLossError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration (unknown key, inconsistent ranks, ...). CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed file. Carries the byte offset where parsing stopped. CLI exit code 4.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, long long byte_offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}
    long long byte_offset() const { return byte_offset_; }

private:
    long long byte_offset_;
};

/// Degenerate numerical situation outside training (e.g. zero median depth).
class DegenerateInputError : public std::runtime_error {
public:
    explicit DegenerateInputError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace adaptsfm
