#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace serum {

// Error categories used across the toolkit. Every module throws one of
// these; the CLI maps them onto structured exit diagnostics.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};

struct RangeError : Error {
    using Error::Error;
};

struct InvalidArgumentError : Error {
    using Error::Error;
};

struct DegeneratePatternError : Error {
    using Error::Error;
};

struct DivergenceInfiniteError : Error {
    using Error::Error;
};

struct CapacityError : Error {
    using Error::Error;
};

struct RegistryIncompleteError : Error {
    using Error::Error;
};

struct InvalidBatchError : Error {
    using Error::Error;
};

struct TrainingDivergedError : Error {
    using Error::Error;
};

struct LeakageError : Error {
    using Error::Error;
};

// Parse failures carry the byte offset of the failing section.
struct ParseError : Error {
    ParseError(const std::string& msg, std::uint64_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::uint64_t byte_offset;
};

struct ConfigError : Error {
    ConfigError(const std::string& field, const std::string& msg)
        : Error("config field '" + field + "': " + msg), field_name(field) {}
    std::string field_name;
};

}  // namespace serum

// Error types are shared across all modules.
namespace serum::core {
using serum::CapacityError;
using serum::ConfigError;
using serum::DegeneratePatternError;
using serum::DivergenceInfiniteError;
using serum::Error;
using serum::InvalidArgumentError;
using serum::InvalidBatchError;
using serum::LeakageError;
using serum::ParseError;
using serum::RangeError;
using serum::RegistryIncompleteError;
using serum::ShapeError;
using serum::TrainingDivergedError;
}  // namespace serum::core
