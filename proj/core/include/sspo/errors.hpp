#pragma once

#include <stdexcept>
#include <string>

namespace sspo {

// Error classes map one-to-one onto the CLI's stderr prefixes and exit codes.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or unmappable records, non-finite numerics in data paths.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Judge client failures, one class per failure mode.
struct JudgeTransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct JudgeProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct JudgeRangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sspo
