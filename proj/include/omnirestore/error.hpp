#pragma once

#include <stdexcept>
#include <string>

namespace omnirestore {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/image extents do not line up (matmul inner dims, conv channels, ...).
struct ShapeError : Error {
    using Error::Error;
};

// A parameter is outside its documented range (opacity, transmission, k, ...).
struct ValueError : Error {
    using Error::Error;
};

// Non-finite input where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// Inconsistent or unusable configuration (empty bank, zero counts, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem level failures: missing files, short reads, unwritable paths.
struct IoError : Error {
    using Error::Error;
};

// Structured input that does not match its format (PPM/PNG headers, manifests).
struct ParseError : Error {
    using Error::Error;
};

// Unsupported file kind (extension or image flavor outside PPM P6 / 8-bit RGB PNG).
struct FormatError : Error {
    using Error::Error;
};

// Text outside the closed degradation vocabulary.
struct VocabError : Error {
    using Error::Error;
};

// A caller broke an API contract (non-scalar loss passed to grad_check, ...).
struct ContractError : Error {
    using Error::Error;
};

// Dataset rows that violate the preconditions of the consuming stage.
struct DatasetError : Error {
    using Error::Error;
};

}  // namespace omnirestore
