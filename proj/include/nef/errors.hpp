#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nef {

// Invalid configuration or option combination.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input data that does not satisfy a loader or module contract.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Structural or checksum failure in one of the binary file formats.
class FormatError : public DataError {
public:
    FormatError(std::string section, const std::string& what)
        : DataError(what), section_(std::move(section))
    {
    }
    const std::string& section() const noexcept { return section_; }

private:
    std::string section_;
};

// A loss or value became non-finite for a specific NeF.
class NumericFault : public std::runtime_error {
public:
    NumericFault(std::size_t nef_index, const std::string& what)
        : std::runtime_error(what + " (nef " + std::to_string(nef_index) + ")"), nef_index_(nef_index)
    {
    }
    std::size_t nef_index() const noexcept { return nef_index_; }

private:
    std::size_t nef_index_;
};

} // namespace nef
