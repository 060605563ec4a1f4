#pragma once

#include <stdexcept>
#include <string>

namespace adfseg {

// Shape/precondition violations at call boundaries.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied configuration values.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset directory / manifest problems (missing files, duplicate ids, ...).
class ManifestError : public std::runtime_error {
 public:
  explicit ManifestError(const std::string& msg) : std::runtime_error(msg) {}
};

// File IO failures (PNG codec, checkpoint archive, ...).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A loss term became NaN/Inf during training; message names the term.
class NonFiniteLossError : public std::runtime_error {
 public:
  explicit NonFiniteLossError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace adfseg
