#pragma once

#include <stdexcept>
#include <string>

namespace step {

/// Malformed input document (map, config, QP dump). The message carries the
/// offending field path and, for syntax errors, the parser's line/byte context.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A prerequisite layer or setting is missing or inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace step
