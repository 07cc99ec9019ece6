#pragma once

#include <cstddef>
#include <iostream>
#include <stdexcept>
#include <string>

namespace tdass {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the primitive they were passed to.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a forward primitive (or a diverged run).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input (out-of-vocab ids, empty sequences, short signals).
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or inconsistent corpus data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad bytes in a checkpoint, utterance or wav file.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

namespace detail {
inline bool& warnings_enabled() {
  static bool enabled = true;
  return enabled;
}
}  // namespace detail

inline void set_warnings_enabled(bool on) { detail::warnings_enabled() = on; }

inline void warn(const std::string& message) {
  if (detail::warnings_enabled()) std::cerr << "warning: " << message << '\n';
}

}  // namespace tdass
