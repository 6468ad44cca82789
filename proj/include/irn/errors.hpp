#pragma once

#include <stdexcept>
#include <string>

namespace irn {

// Bad run configuration (unknown keys, invalid field combinations).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or unusable input data (directories, images, checkpoints).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed serialized bytes (image containers, metadata payloads).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Artifact and checkpoint variants that do not belong together.
struct MismatchError : std::runtime_error {
    explicit MismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace irn
