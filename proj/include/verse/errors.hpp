#pragma once

#include <stdexcept>
#include <string>

namespace verse {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a precondition (shape mismatch, out-of-bounds click, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A file was readable but its content is malformed or inconsistent.
class FormatError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or report produced by an incompatible format/config.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// A hard capacity was exceeded (click cap, upload size).
class LimitError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

#define VERSE_REQUIRE(cond, msg)                  \
  do {                                            \
    if (!(cond)) throw ::verse::ContractError(msg); \
  } while (0)

}  // namespace verse
