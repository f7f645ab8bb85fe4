#ifndef NATSEG_COMMON_H_
#define NATSEG_COMMON_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace natseg {

#ifdef NATSEG_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

// Checkpoint dtype tag: bytes per stored scalar.
inline constexpr std::uint32_t kRealBytes = sizeof(Real);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or channel layouts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model / layer / run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Misuse of a stateful object (double backward, etc).
class StateError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf, degenerate statistics, undefined metrics.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File ingestion and checkpoint failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Sets the OpenMP thread cap from NATSEG_THREADS if present. No-op otherwise.
void apply_thread_limit_from_env();

}  // namespace natseg

#endif  // NATSEG_COMMON_H_
