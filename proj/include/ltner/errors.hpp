#pragma once

#include <stdexcept>
#include <string>

namespace ltner {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (carries the 1-based line number when known).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A JSON record could not be turned back into an example.
class ConversionError : public Error {
public:
    using Error::Error;
};

/// Index, cache or run-file load failure.
class LoadError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    BackendError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

class CacheMissError : public BackendError {
public:
    explicit CacheMissError(std::string digest)
        : BackendError("replay cache miss for digest " + digest, false), digest_(std::move(digest)) {}
    const std::string& digest() const noexcept { return digest_; }

private:
    std::string digest_;
};

}  // namespace ltner
