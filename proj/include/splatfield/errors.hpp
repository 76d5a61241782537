#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace splatfield {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad argument ranges, shape mismatches, broken invariants.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// File could not be opened or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed binary payload. `offset` is the byte position where parsing stopped.
class FormatError : public Error {
public:
    enum class Kind { bad_magic, bad_version, truncated, bad_counts, invalid_content };

    FormatError(Kind kind, std::uint64_t offset, const std::string& what)
        : Error(what), kind_(kind), offset_(offset) {}

    Kind kind() const noexcept { return kind_; }
    std::uint64_t offset() const noexcept { return offset_; }

private:
    Kind kind_;
    std::uint64_t offset_;
};

/// Gradient evaluation problems: missing forward tape, non-finite values.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace splatfield
