#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace exgrpo {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input record; carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class InvariantError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Caller broke an operation's precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Teacher call failed. `raw()` holds the unparsed reply text when the failure was a parse failure.
class OracleError : public Error {
public:
    explicit OracleError(const std::string& what, std::string raw = {})
        : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Process exit status per failure class: 2 config, 3 I/O, 4 parse/schema, 5 teacher,
/// 6 numeric, 7 contract/invariant, 1 anything else.
int exit_code_for(const std::exception& e) noexcept;

}  // namespace exgrpo
