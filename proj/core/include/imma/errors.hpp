#pragma once

#include <stdexcept>
#include <string>

namespace imma {

/// Invalid or unknown configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A referenced checkpoint / data file does not exist (CLI exit code 3).
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace imma
