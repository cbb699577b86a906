// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ehfo {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// An adaptive numerical procedure could not reach the requested tolerance.
class ToleranceError : public std::runtime_error {
public:
    ToleranceError(const std::string& what, double achieved)
        : std::runtime_error(what), achieved_(achieved) {}
    double achieved() const noexcept { return achieved_; }

private:
    double achieved_;
};

/// Bracketing root finder was handed an interval without a sign change.
class NoSignChangeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Two vectors or matrices with incompatible sizes.
class LengthMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// TX and RX harvesting profiles do not share the same band structure.
class NotSimilarError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Policy or scenario violates an energy or domain constraint.
class InfeasibleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace ehfo
