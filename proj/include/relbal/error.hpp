#pragma once

#include <stdexcept>
#include <string>

namespace relbal {

// Every failure raised by the library carries a short machine-readable kind
// ("shape", "config", ...) so the CLI can print a one-line parsable error.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& m) : Error("invalid-argument", m) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error("contract", m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error("data", m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io", m) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format", m) {}
};

}  // namespace relbal
