#pragma once

#include <stdexcept>
#include <string>

namespace safeloco {

// Bad shapes, unknown config keys, out-of-range settings.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// API called in the wrong state or with malformed arguments.
class UsageError : public std::logic_error {
 public:
  explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

// Non-finite gradients, losses or parameters.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

// A checkpoint, scenario or run directory that should exist does not.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace safeloco
