#pragma once

#include <stdexcept>
#include <string>

namespace mv {

// Error taxonomy shared by the library and the CLI exit-code mapping:
//   usage -> 1 (handled by the CLI parser), config/contract -> 2,
//   numeric -> 3, I/O -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// Violated precondition on an API call (non-scalar loss, unnormalized
// distribution, bad task shape, ...).
struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& msg, int line)
        : Error("parse error at line " + std::to_string(line) + ": " + msg), line_no(line) {}
    explicit ParseError(const std::string& msg) : Error(msg), line_no(0) {}
    int line_no;
};

struct VersionError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Combinatorial budget exceeded (exhaustive enumeration oracles).
struct SizeError : Error {
    using Error::Error;
};

}  // namespace mv
