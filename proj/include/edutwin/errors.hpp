#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace edutwin {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// dataset
class SchemaError : public Error {
public:
    SchemaError(const std::string& message, std::size_t line = 0)
        : Error(line ? message + " (line " + std::to_string(line) + ")" : message), line_(line) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValueError : public Error {
public:
    using Error::Error;
};

class MappingError : public Error {
public:
    using Error::Error;
};

class DegenerateTrace : public Error {
public:
    using Error::Error;
};

// persona
class EmptyProfile : public Error {
public:
    using Error::Error;
};

class InsufficientHistory : public Error {
public:
    using Error::Error;
};

class MissingPriorLevels : public Error {
public:
    using Error::Error;
};

class MissingInput : public Error {
public:
    MissingInput(const std::string& feature, const std::string& detail)
        : Error("missing input '" + feature + "': " + detail), feature_(feature) {}
    [[nodiscard]] const std::string& feature() const noexcept { return feature_; }

private:
    std::string feature_;
};

class RenderError : public Error {
public:
    using Error::Error;
};

// gateway
class BackendUnavailable : public Error {
public:
    using Error::Error;
};

class AuthError : public Error {
public:
    using Error::Error;
};

/// Raised by a backend for failures worth retrying (5xx, 429, connection reset).
class TransientError : public Error {
public:
    using Error::Error;
};

class CacheCorruption : public Error {
public:
    using Error::Error;
};

class MissingCacheEntry : public Error {
public:
    explicit MissingCacheEntry(std::vector<std::string> digests)
        : Error(describe(digests)), digests_(std::move(digests)) {}
    [[nodiscard]] const std::vector<std::string>& digests() const noexcept { return digests_; }

private:
    static std::string describe(const std::vector<std::string>& d) {
        std::string msg = "replay cache is missing " + std::to_string(d.size()) + " entr" +
                          (d.size() == 1 ? "y" : "ies");
        for (std::size_t i = 0; i < d.size() && i < 5; ++i) msg += (i ? ", " : ": ") + d[i];
        if (d.size() > 5) msg += ", ...";
        return msg;
    }
    std::vector<std::string> digests_;
};

class UnrecognizedPromptShape : public Error {
public:
    using Error::Error;
};

// parser
class Unparseable : public Error {
public:
    using Error::Error;
};

class LengthMismatch : public Unparseable {
public:
    LengthMismatch(std::size_t expected, std::size_t found)
        : Unparseable("expected " + std::to_string(expected) + " values, found " +
                      std::to_string(found)),
          expected_(expected), found_(found) {}
    [[nodiscard]] std::size_t expected() const noexcept { return expected_; }
    [[nodiscard]] std::size_t found() const noexcept { return found_; }

private:
    std::size_t expected_;
    std::size_t found_;
};

// analysis
class ZeroVariance : public Error {
public:
    using Error::Error;
};

class SizeMismatch : public Error {
public:
    using Error::Error;
};

// cli
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace edutwin
