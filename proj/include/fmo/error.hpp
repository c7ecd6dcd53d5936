#pragma once

#include <stdexcept>
#include <string>

namespace fmo {

/// Invalid or inconsistent user-supplied configuration (unknown case names,
/// goals referencing missing structures, malformed config fields, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Vector or matrix sizes that do not agree.
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

} // namespace fmo
