#ifndef CORRGROUP_ERROR_HPP
#define CORRGROUP_ERROR_HPP

#include <stdexcept>
#include <string>

/**
 * @file error.hpp
 * @brief Exception types thrown by corrgroup.
 *
 * Everything derives from either `ValidationError` (bad input supplied by the caller)
 * or `std::runtime_error` (failures while computing). The CLI maps the former to exit code 1.
 */

namespace corrgroup {

/**
 * @brief Input data or arguments violate a documented precondition.
 */
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * @brief Malformed delimited text; the message names the offending line.
 */
class ParseError : public ValidationError {
public:
    ParseError(const std::string& what, std::size_t line)
        : ValidationError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class InvalidArgument : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/**
 * @brief Correlation requested for a (numerically) constant vector.
 */
class UndefinedCorrelation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * @brief Binary labels contain a single class.
 */
class DegenerateLabels : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/**
 * @brief A matrix lacks genes that a grouping rule or model refers to.
 */
class MissingGenes : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class EmptyBlueprint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidExperiment : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}

#endif
