#pragma once

#include <stdexcept>
#include <string>

namespace ecvl {

// Input data violates a schema or invariant. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller passed an argument outside an operation's contract.
class RangeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Model container problems: bad magic/version or checksum mismatch.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ecvl
