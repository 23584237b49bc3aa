#pragma once

#include <stdexcept>
#include <string>

namespace splitmix {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration; `path` names the offending field or layer.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Non-finite loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Violation of the federated protocol (budget cap, bad sampler request).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated data files.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace splitmix
